import { defineConfig } from "vitest/config";

// base "./" so the bundle works from the session service's static mount
export default defineConfig({
  base: "./",
  build: { outDir: "dist" },
  server: {
    proxy: { "/sessions": "http://127.0.0.1:8000" },
  },
  test: {
    environment: "jsdom",
  },
});
