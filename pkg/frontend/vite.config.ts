import { defineConfig } from "vitest/config";

export default defineConfig({
  build: { outDir: "dist", emptyOutDir: true },
  test: {
    environment: "jsdom",
    globalSetup: "./tests/setup/global.ts",
    testTimeout: 120000,
    hookTimeout: 180000,
    pool: "forks",
    poolOptions: { forks: { singleFork: true } },
  },
});
