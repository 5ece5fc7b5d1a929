import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    globalSetup: process.env.SKIP_E2E ? [] : ["tests/setup/spawn-service.ts"],
    testTimeout: 120_000,
    hookTimeout: 180_000,
  },
});
