// Hash-routed single-page app over the /v1 API: four pages, no
// client-side state beyond the last query in session storage.

import { setApiBase } from "./api";
import { el } from "./dom";
import { DirectoriesPage } from "./pages/directories";
import { GeneratorsPage } from "./pages/generators";
import { SearchPage } from "./pages/search";
import { StatusPage } from "./pages/status";
import "./style.css";

type PageName = "search" | "directories" | "generators" | "status";

interface Mountable {
  root: HTMLElement;
  mount?(): void | Promise<void>;
  unmount?(): void;
}

export function bootstrap(container: HTMLElement, apiBaseUrl?: string): () => void {
  if (apiBaseUrl) setApiBase(apiBaseUrl);

  const pages: Record<PageName, Mountable> = {
    search: new SearchPage(),
    directories: new DirectoriesPage(),
    generators: new GeneratorsPage(),
    status: new StatusPage(),
  };

  const nav = el("nav", { class: "topnav" });
  for (const name of Object.keys(pages) as PageName[]) {
    nav.append(el("a", { href: `#/${name}`, class: `nav-${name}` }, name));
  }
  const outlet = el("main", { class: "outlet" });
  container.append(nav, outlet);

  let active: Mountable | null = null;

  function currentPage(): PageName {
    const hash = window.location.hash.replace(/^#\//, "");
    return (hash in pages ? hash : "search") as PageName;
  }

  function show(name: PageName): void {
    if (active) {
      active.unmount?.();
      active.root.remove();
    }
    active = pages[name];
    outlet.append(active.root);
    void active.mount?.();
    for (const link of Array.from(nav.children)) {
      link.classList.toggle("active", link.classList.contains(`nav-${name}`));
    }
  }

  const onHashChange = () => show(currentPage());
  window.addEventListener("hashchange", onHashChange);
  show(currentPage());

  return () => {
    window.removeEventListener("hashchange", onHashChange);
    active?.unmount?.();
  };
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  bootstrap(document.getElementById("app")!);
}
