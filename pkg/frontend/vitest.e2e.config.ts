import { defineConfig } from "vitest/config";

// End-to-end run against a live local service process. Runs in the node
// environment so fetch/FormData/Blob are the platform natives; the DOM the
// client renders into is built explicitly with jsdom inside the test file.
// Generous timeouts cover service start-up and real HTTP round trips.
export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/e2e/**/*.e2e.test.ts"],
    testTimeout: 180_000,
    hookTimeout: 180_000,
    fileParallelism: false,
  },
});
