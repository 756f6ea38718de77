// Search page: prompt form with generation parameters, guide-image
// strip (dropped guides dimmed and badged), and the fused result grid.

import { api, ApiError, imageUrl, QueryOverrides, QueryResponse } from "../api";
import { banner, clear, el } from "../dom";

const LAST_QUERY_KEY = "needle:lastQuery";

interface StoredQuery {
  prompt: string;
  n: number;
  m?: number;
  resolution?: string;
}

export class SearchPage {
  readonly root: HTMLElement;
  private form!: HTMLFormElement;
  private guides!: HTMLElement;
  private results!: HTMLElement;
  private notices!: HTMLElement;
  private enginePanel!: HTMLElement;
  private submitting = false;

  constructor() {
    this.root = el("section", { class: "page page-search" });
    this.render();
    this.restoreLastQuery();
  }

  async mount(): Promise<void> {
    // engine selection reflects the current generator registry
    try {
      const listing = await api.generators();
      clear(this.enginePanel);
      this.enginePanel.append("engines ");
      for (const engine of listing.generators) {
        const box = el("input", {
          type: "checkbox",
          class: "engine-choice",
          value: engine.name,
        }) as HTMLInputElement;
        box.checked = engine.enabled;
        this.enginePanel.append(el("label", { class: "engine-choice-label" },
          box, ` ${engine.name}`));
      }
    } catch {
      // engine list is decorative; search still works without it
    }
  }

  private render(): void {
    this.notices = el("div", { class: "notices" });
    this.form = el("form", { class: "search-form" }) as HTMLFormElement;
    this.form.append(
      el("input", {
        name: "prompt",
        type: "text",
        placeholder: "describe the image, e.g. a red circle on a white background",
        class: "prompt-input",
      }),
      el("label", {}, "results ", el("input", {
        name: "n", type: "number", value: "10", min: "1", class: "n-input",
      })),
      el("label", {}, "guides ", el("input", {
        name: "m", type: "number", value: "", min: "1", class: "m-input",
      })),
      el("label", {}, "resolution ", this.resolutionSelect()),
      this.enginePanel = el("span", { class: "engine-panel" }),
      el("button", { type: "submit" }, "search"),
    );
    this.form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submit();
    });
    this.guides = el("div", { class: "guide-strip" });
    this.results = el("div", { class: "result-grid" });
    this.root.append(
      el("h2", {}, "Search"),
      this.notices,
      this.form,
      this.guides,
      this.results,
    );
  }

  private resolutionSelect(): HTMLSelectElement {
    const select = el("select", { name: "resolution" }) as HTMLSelectElement;
    for (const name of ["", "SMALL", "MEDIUM", "LARGE"]) {
      select.append(el("option", { value: name }, name || "(default)"));
    }
    return select;
  }

  private restoreLastQuery(): void {
    const raw = sessionStorage.getItem(LAST_QUERY_KEY);
    if (!raw) return;
    try {
      const stored = JSON.parse(raw) as StoredQuery;
      (this.form.elements.namedItem("prompt") as HTMLInputElement).value = stored.prompt;
      (this.form.elements.namedItem("n") as HTMLInputElement).value = String(stored.n);
      if (stored.m) {
        (this.form.elements.namedItem("m") as HTMLInputElement).value = String(stored.m);
      }
    } catch {
      sessionStorage.removeItem(LAST_QUERY_KEY);
    }
  }

  async submit(): Promise<void> {
    if (this.submitting) return;
    const prompt = (this.form.elements.namedItem("prompt") as HTMLInputElement).value.trim();
    const n = parseInt((this.form.elements.namedItem("n") as HTMLInputElement).value, 10) || 10;
    const mRaw = (this.form.elements.namedItem("m") as HTMLInputElement).value;
    const resolution = (this.form.elements.namedItem("resolution") as HTMLSelectElement).value;
    if (!prompt) {
      this.notices.append(banner("enter a prompt first", "warn"));
      return;
    }
    const overrides: QueryOverrides = {};
    if (mRaw) overrides.m = parseInt(mRaw, 10);
    if (resolution) overrides.resolution = resolution;
    const chosen = Array.from(
      this.enginePanel.querySelectorAll<HTMLInputElement>(".engine-choice"),
    );
    if (chosen.length > 0 && chosen.some((box) => !box.checked)) {
      overrides.engines = chosen.filter((b) => b.checked).map((b) => b.value);
    }

    this.submitting = true;
    this.setFormDisabled(true);
    clear(this.notices);
    try {
      const response = await api.query(prompt, n, overrides);
      sessionStorage.setItem(
        LAST_QUERY_KEY,
        JSON.stringify({ prompt, n, m: overrides.m, resolution } satisfies StoredQuery),
      );
      this.renderResponse(response);
    } catch (err) {
      this.renderError(err);
    } finally {
      this.submitting = false;
      this.setFormDisabled(false);
    }
  }

  private setFormDisabled(disabled: boolean): void {
    for (const element of Array.from(this.form.elements)) {
      (element as HTMLInputElement).disabled = disabled;
    }
  }

  private renderResponse(response: QueryResponse): void {
    clear(this.guides);
    clear(this.results);
    for (const guide of response.guides) {
      const img = el("img", {
        src: imageUrl(guide.url),
        class: guide.kept ? "guide" : "guide dropped",
        title: `engine ${guide.engineName}, seed ${guide.seed}`,
      });
      const cell = el("figure", { class: "guide-cell" }, img);
      if (!guide.kept) {
        cell.append(el("figcaption", { class: "outlier-badge" }, "outlier"));
      }
      this.guides.append(cell);
    }
    if (response.results.length === 0) {
      this.results.append(
        el("div", { class: "empty-state" }, "no results - the index may be empty"),
      );
      return;
    }
    for (const entry of response.results) {
      this.results.append(
        el("figure", { class: "result-cell" },
          el("img", { src: imageUrl(entry.url), class: "result" }),
          el("figcaption", {},
            `${entry.path ?? entry.imageId} (${entry.score.toPrecision(4)})`),
        ),
      );
    }
  }

  private renderError(err: unknown): void {
    clear(this.guides);
    clear(this.results);
    if (err instanceof ApiError && err.status === 503) {
      const detail = err.detail as { error?: string; causes?: Record<string, string> };
      const causes = detail?.causes
        ? Object.entries(detail.causes).map(([name, cause]) => `${name}: ${cause}`).join("; ")
        : "";
      this.notices.append(
        banner(`generation failed (${detail?.error ?? "unavailable"}) ${causes}`, "error"),
      );
      return;
    }
    this.notices.append(banner(`query failed: ${String(err)}`, "error"));
  }
}
