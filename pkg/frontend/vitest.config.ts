import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    testTimeout: 20000,
    hookTimeout: 60000,
    // the e2e spawns one real service; keep files sequential
    fileParallelism: false,
  },
});
