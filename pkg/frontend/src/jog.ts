// Repeat-fire for held jog controls: one event immediately, then at a fixed
// rate until release (default 30 Hz).

import { JogAxis } from "./session.js";

export interface JogRepeaterOptions {
  rateHz?: number;
  fire: (axis: JogAxis, delta: number) => void;
}

export class JogRepeater {
  private readonly periodMs: number;
  private readonly fire: (axis: JogAxis, delta: number) => void;
  private timers = new Map<JogAxis, ReturnType<typeof setInterval>>();

  constructor(options: JogRepeaterOptions) {
    this.periodMs = 1000 / (options.rateHz ?? 30);
    this.fire = options.fire;
  }

  hold(axis: JogAxis, delta: number): void {
    this.release(axis);
    this.fire(axis, delta);
    const timer = setInterval(() => this.fire(axis, delta), this.periodMs);
    this.timers.set(axis, timer);
  }

  release(axis: JogAxis): void {
    const timer = this.timers.get(axis);
    if (timer !== undefined) {
      clearInterval(timer);
      this.timers.delete(axis);
    }
  }

  releaseAll(): void {
    for (const axis of [...this.timers.keys()]) this.release(axis);
  }

  get active(): boolean {
    return this.timers.size > 0;
  }
}
