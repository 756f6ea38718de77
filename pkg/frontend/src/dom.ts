// Small DOM helpers: element construction without a framework.

type Child = Node | string | null | undefined;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | boolean | ((ev: Event) => void)> = {},
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === "function") {
      node.addEventListener(key.replace(/^on/, ""), value);
    } else if (typeof value === "boolean") {
      if (value) node.setAttribute(key, "");
    } else {
      node.setAttribute(key, value);
    }
  }
  for (const child of children) {
    if (child === null || child === undefined) continue;
    node.append(child);
  }
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.lastChild) node.removeChild(node.lastChild);
}

export function banner(message: string, kind: "error" | "warn" | "info"): HTMLElement {
  const note = el("div", { class: `banner banner-${kind}` }, message);
  const dismiss = el("button", {
    class: "banner-dismiss",
    onclick: () => note.remove(),
  }, "x");
  note.append(dismiss);
  return note;
}
