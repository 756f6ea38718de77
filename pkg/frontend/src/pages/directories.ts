// Directory management: live table with progress bars (polled while
// anything is still indexing), add form, enable toggles, removal.

import { api, DirectoryInfo } from "../api";
import { banner, clear, el } from "../dom";
import { Poller } from "../poll";

export class DirectoriesPage {
  readonly root: HTMLElement;
  readonly poller: Poller;
  private tbody!: HTMLElement;
  private notices!: HTMLElement;
  private entries: DirectoryInfo[] = [];

  constructor(pollMs = 2000) {
    this.root = el("section", { class: "page page-directories" });
    this.poller = new Poller(() => this.refresh(), pollMs);
    this.render();
  }

  private render(): void {
    this.notices = el("div", { class: "notices" });
    const form = el("form", { class: "add-form" }) as HTMLFormElement;
    form.append(
      el("input", {
        name: "path", type: "text", placeholder: "/absolute/path/to/images",
        class: "path-input",
      }),
      el("button", { type: "submit" }, "add directory"),
    );
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const input = form.elements.namedItem("path") as HTMLInputElement;
      if (input.value.trim()) void this.add(input.value.trim());
    });
    const table = el("table", { class: "directory-table" });
    this.tbody = el("tbody", {});
    table.append(
      el("thead", {}, el("tr", {},
        el("th", {}, "path"), el("th", {}, "images"), el("th", {}, "progress"),
        el("th", {}, "enabled"), el("th", {}, ""))),
      this.tbody,
    );
    this.root.append(el("h2", {}, "Directories"), this.notices, form, table);
  }

  mount(): void {
    this.poller.start();
  }

  unmount(): void {
    this.poller.stop();
  }

  async add(path: string): Promise<void> {
    try {
      await api.addDirectory(path);
    } catch (err) {
      this.notices.append(banner(`add failed: ${String(err)}`, "error"));
      return;
    }
    await this.poller.runOnce();
    if (!this.poller.running) this.poller.start();
  }

  async refresh(): Promise<void> {
    this.entries = await api.directories();
    this.renderRows();
    // progress is poll-driven; once everything is settled stop burning
    // requests (a new add restarts the loop)
    if (this.entries.every((e) => e.progress >= 1.0)) {
      this.poller.stop();
    }
  }

  private renderRows(): void {
    clear(this.tbody);
    if (this.entries.length === 0) {
      this.tbody.append(el("tr", {}, el("td", { colspan: "5" }, "no directories registered")));
      return;
    }
    for (const entry of this.entries) {
      const bar = el("div", { class: "progress-track" },
        el("div", {
          class: "progress-fill",
          style: `width: ${Math.round(entry.progress * 100)}%`,
        }));
      const label = el("span", { class: "progress-label" },
        `${Math.round(entry.progress * 100)}%`);
      const toggle = el("input", {
        type: "checkbox",
        class: "enable-toggle",
        onchange: () => void this.toggle(entry),
      }) as HTMLInputElement;
      toggle.checked = entry.enabled;
      const remove = el("button", {
        class: "remove-btn",
        onclick: () => void this.remove(entry),
      }, "remove");
      this.tbody.append(
        el("tr", { class: entry.enabled ? "dir-row" : "dir-row disabled", "data-id": String(entry.id) },
          el("td", {}, entry.path),
          el("td", {}, String(entry.imageCount)),
          el("td", {}, bar, label),
          el("td", {}, toggle),
          el("td", {}, remove),
        ),
      );
    }
  }

  private async toggle(entry: DirectoryInfo): Promise<void> {
    try {
      await api.setDirectoryEnabled(entry.id, !entry.enabled);
      await this.poller.runOnce();
    } catch (err) {
      this.notices.append(banner(`update failed: ${String(err)}`, "error"));
    }
  }

  private async remove(entry: DirectoryInfo): Promise<void> {
    if (!window.confirm(`remove ${entry.path} from the index?`)) return;
    try {
      await api.removeDirectory(entry.id);
      await this.poller.runOnce();
    } catch (err) {
      this.notices.append(banner(`remove failed: ${String(err)}`, "error"));
    }
  }
}
