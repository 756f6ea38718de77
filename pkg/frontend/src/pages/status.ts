// Status dashboard: API health, per-service states, directory
// summaries, generator availability, and component versions, polled on
// an interval. When the API stops answering, a full-page overlay with
// a retry button takes over.

import { api, StatusReport } from "../api";
import { clear, el } from "../dom";
import { Poller } from "../poll";

export class StatusPage {
  readonly root: HTMLElement;
  readonly poller: Poller;
  private cards!: HTMLElement;
  private overlay!: HTMLElement;
  lastReport: StatusReport | null = null;

  constructor(pollMs = 5000) {
    this.root = el("section", { class: "page page-status" });
    this.cards = el("div", { class: "status-cards" });
    this.overlay = el("div", { class: "disconnected-overlay hidden" },
      el("p", {}, "backend unreachable"),
      el("button", { class: "retry-btn", onclick: () => void this.poller.runOnce() }, "retry"),
    );
    this.root.append(el("h2", {}, "Status"), this.cards, this.overlay);
    this.poller = new Poller(() => this.refresh(), pollMs);
  }

  mount(): void {
    this.poller.start();
  }

  unmount(): void {
    this.poller.stop();
  }

  async refresh(): Promise<void> {
    let report: StatusReport;
    try {
      report = await api.status();
    } catch {
      this.overlay.classList.remove("hidden");
      return;
    }
    this.overlay.classList.add("hidden");
    this.lastReport = report;
    this.renderCards(report);
  }

  private renderCards(report: StatusReport): void {
    clear(this.cards);

    const apiCard = el("div", { class: "card card-api" },
      el("h3", {}, "API"),
      el("span", { class: report.apiHealthy ? "state up" : "state down" },
        report.apiHealthy ? "healthy" : "down"));

    const servicesCard = el("div", { class: "card card-services" }, el("h3", {}, "Services"));
    for (const [name, state] of Object.entries(report.services)) {
      servicesCard.append(
        el("div", { class: `service-row service-${name}` },
          el("span", { class: "service-name" }, name),
          el("span", { class: `state ${state}` }, state)),
      );
    }

    const dirCard = el("div", { class: "card card-directories" }, el("h3", {}, "Directories"));
    if (report.directories.length === 0) {
      dirCard.append(el("p", { class: "empty" }, "none registered"));
    }
    for (const entry of report.directories) {
      dirCard.append(
        el("div", { class: "dir-summary" },
          el("span", {}, entry.path),
          el("span", {}, `${entry.imageCount} images`),
          el("span", {}, `${Math.round(entry.progress * 100)}%`)),
      );
    }

    const genCard = el("div", { class: "card card-generators" }, el("h3", {}, "Generators"));
    for (const engine of report.generators) {
      genCard.append(
        el("div", { class: "gen-row" },
          el("span", {}, `${engine.priority}. ${engine.name}`),
          el("span", { class: engine.enabled ? "state up" : "state off" },
            engine.enabled ? "enabled" : "disabled"),
          el("span", { class: engine.healthy ? "state up" : "state down" },
            engine.healthy ? "healthy" : "degraded")),
      );
    }

    const versionsCard = el("div", { class: "card card-versions" }, el("h3", {}, "Versions"));
    for (const [component, version] of Object.entries(report.versions)) {
      versionsCard.append(
        el("div", { class: "version-row", "data-component": component },
          el("span", {}, component), el("span", { class: "version" }, version)),
      );
    }

    this.cards.append(apiCard, servicesCard, dirCard, genCard, versionsCard);
  }
}
