import { defineConfig } from "vitest/config";

// test files run sequentially: the live-session test spawns the simulator
// and paces jog repeat-fire with real timers, so it needs the CPU to itself
export default defineConfig({
  test: {
    fileParallelism: false,
    testTimeout: 20_000,
  },
});
