// Generator configuration: drag-to-reorder priority list with a
// revision token guarding against concurrent edits, plus per-engine
// enable switches. A 409 from the backend reloads and notifies.

import { api, ApiError, GeneratorInfo } from "../api";
import { banner, clear, el } from "../dom";

export class GeneratorsPage {
  readonly root: HTMLElement;
  private list!: HTMLElement;
  private notices!: HTMLElement;
  private revision = 0;
  private engines: GeneratorInfo[] = [];
  private dragFrom: number | null = null;

  constructor() {
    this.root = el("section", { class: "page page-generators" });
    this.notices = el("div", { class: "notices" });
    this.list = el("ul", { class: "engine-list" });
    this.root.append(el("h2", {}, "Generators"), this.notices, this.list);
  }

  async mount(): Promise<void> {
    await this.reload();
  }

  unmount(): void {}

  async reload(): Promise<void> {
    const body = await api.generators();
    this.revision = body.revision;
    this.engines = body.generators;
    this.renderList();
  }

  private renderList(): void {
    clear(this.list);
    if (this.engines.length > 0 && this.engines.every((e) => !e.enabled)) {
      this.notices.append(
        banner("all engines are disabled: queries will fail", "warn"),
      );
    }
    this.engines.forEach((engine, index) => {
      const item = el("li", {
        class: "engine-item",
        draggable: "true",
        "data-name": engine.name,
      },
        el("span", { class: "engine-grip" }, "="),
        el("span", { class: "engine-priority" }, String(engine.priority)),
        el("span", { class: "engine-name" }, engine.name),
        el("span", { class: "engine-kind" }, engine.kind),
        el("span", {
          class: engine.healthy ? "engine-health healthy" : "engine-health degraded",
        }, engine.healthy ? "healthy" : "degraded"),
      );
      const toggle = el("input", {
        type: "checkbox",
        class: "engine-toggle",
        onchange: () => void this.setEnabled(engine.name, !engine.enabled),
      }) as HTMLInputElement;
      toggle.checked = engine.enabled;
      item.append(toggle);

      item.addEventListener("dragstart", () => {
        this.dragFrom = index;
      });
      item.addEventListener("dragover", (ev) => ev.preventDefault());
      item.addEventListener("drop", (ev) => {
        ev.preventDefault();
        if (this.dragFrom !== null && this.dragFrom !== index) {
          void this.moveEngine(this.dragFrom, index);
        }
        this.dragFrom = null;
      });
      this.list.append(item);
    });
  }

  /** Reorder by index and persist; the drop handler calls this. */
  async moveEngine(from: number, to: number): Promise<void> {
    const names = this.engines.map((e) => e.name);
    const [moved] = names.splice(from, 1);
    names.splice(to, 0, moved);
    await this.persistOrder(names);
  }

  async persistOrder(orderedNames: string[]): Promise<void> {
    clear(this.notices);
    try {
      const body = await api.reorderGenerators(orderedNames, this.revision);
      this.revision = body.revision;
      await this.reload();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.notices.append(
          banner("configuration changed elsewhere; reloaded", "warn"),
        );
        await this.reload();
        return;
      }
      this.notices.append(banner(`reorder failed: ${String(err)}`, "error"));
    }
  }

  async setEnabled(name: string, enabled: boolean): Promise<void> {
    clear(this.notices);
    try {
      const body = await api.setEngineEnabled(name, enabled, this.revision);
      this.revision = body.revision;
      await this.reload();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.notices.append(
          banner("configuration changed elsewhere; reloaded", "warn"),
        );
        await this.reload();
        return;
      }
      this.notices.append(banner(`update failed: ${String(err)}`, "error"));
    }
  }

  currentOrder(): string[] {
    return this.engines.map((e) => e.name);
  }
}
