import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    globals: true,
    // the round-trip suite boots a real gateway process
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
