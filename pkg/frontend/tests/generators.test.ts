import { afterAll, beforeAll, beforeEach, describe, expect, inject, it } from "vitest";

import { api, setApiBase } from "../src/api";
import { GeneratorsPage } from "../src/pages/generators";

let originalOrder: string[] = [];
let originalEnabled: [string, boolean][] = [];

beforeAll(async () => {
  setApiBase(inject("apiBase"));
  const listing = await api.generators();
  originalOrder = listing.generators.map((g) => g.name);
  originalEnabled = listing.generators.map((g) => [g.name, g.enabled]);
});

afterAll(async () => {
  // restore the backend config for any suites that run later
  let revision = (await api.generators()).revision;
  revision = (await api.reorderGenerators(originalOrder, revision)).revision;
  for (const [name, enabled] of originalEnabled) {
    revision = (await api.setEngineEnabled(name, enabled, revision)).revision;
  }
});

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("generators page", () => {
  it("drag-reorder persists across reload", async () => {
    const page = new GeneratorsPage();
    document.body.append(page.root);
    await page.mount();
    const before = page.currentOrder();
    expect(before.length).toBeGreaterThan(1);

    await page.moveEngine(1, 0); // the drop handler's effect
    const reordered = page.currentOrder();
    expect(reordered[0]).toBe(before[1]);

    // a fresh page (= browser reload) sees the persisted order
    const reloaded = new GeneratorsPage();
    await reloaded.mount();
    expect(reloaded.currentOrder()).toEqual(reordered);
    const priorities = Array.from(
      reloaded.root.querySelectorAll(".engine-priority"),
    ).map((node) => node.textContent);
    expect(priorities).toEqual(["0", "1"]);
  });

  it("stale revision shows the conflict notice and reloads", async () => {
    const stale = new GeneratorsPage();
    await stale.mount();
    const fresh = new GeneratorsPage();
    await fresh.mount();

    await fresh.persistOrder([...fresh.currentOrder()].reverse());
    // `stale` still holds the old revision token
    await stale.persistOrder([...stale.currentOrder()].reverse());
    const notice = stale.root.querySelector(".banner-warn");
    expect(notice).not.toBeNull();
    expect(notice!.textContent).toContain("configuration changed");
    // after the forced reload both agree with the server
    expect(stale.currentOrder()).toEqual(fresh.currentOrder());
  });

  it("warns when every engine is disabled", async () => {
    const page = new GeneratorsPage();
    document.body.append(page.root);
    await page.mount();
    let revision = (await api.generators()).revision;
    const names = page.currentOrder();
    try {
      for (const name of names) {
        revision = (await api.setEngineEnabled(name, false, revision)).revision;
      }
      await page.reload();
      const warning = page.root.querySelector(".banner-warn");
      expect(warning).not.toBeNull();
      expect(warning!.textContent).toContain("queries will fail");
    } finally {
      let rev = (await api.generators()).revision;
      for (const [name, enabled] of originalEnabled) {
        rev = (await api.setEngineEnabled(name, enabled, rev)).revision;
      }
    }
  });
});
