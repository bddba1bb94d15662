// Minimal canvas strip chart fed from the session's rolling history only.

import { ErrorSample } from "./session.js";

export interface StripChartStyle {
  stroke: string;
  background: string;
  label: string;
}

export class StripChart {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly pick: (sample: ErrorSample) => number,
    private readonly style: StripChartStyle,
  ) {
    const ctx = canvas.getContext("2d");
    if (ctx === null) throw new Error("canvas 2d context unavailable");
    this.ctx = ctx;
  }

  render(history: ErrorSample[]): void {
    const { width, height } = this.canvas;
    const ctx = this.ctx;
    ctx.fillStyle = this.style.background;
    ctx.fillRect(0, 0, width, height);
    if (history.length < 2) return;
    const values = history.map(this.pick);
    const max = Math.max(...values, 1e-6);
    ctx.strokeStyle = this.style.stroke;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    values.forEach((v, i) => {
      const x = (i / (values.length - 1)) * (width - 4) + 2;
      const y = height - 2 - (v / max) * (height - 14);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = this.style.stroke;
    ctx.font = "10px monospace";
    const last = values[values.length - 1];
    ctx.fillText(`${this.style.label} ${last.toExponential(2)} (max ${max.toExponential(2)})`, 4, 10);
  }
}

export function renderBars(
  canvas: HTMLCanvasElement,
  values: number[],
  scale: number,
  color: string,
): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const { width, height } = canvas;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, width, height);
  const mid = height / 2;
  const bar = width / Math.max(values.length, 1);
  ctx.fillStyle = color;
  values.forEach((v, i) => {
    const h = Math.max(-1, Math.min(1, v / scale)) * (mid - 2);
    ctx.fillRect(i * bar + 2, h >= 0 ? mid - h : mid, bar - 4, Math.abs(h));
  });
  ctx.strokeStyle = "#555";
  ctx.beginPath();
  ctx.moveTo(0, mid);
  ctx.lineTo(width, mid);
  ctx.stroke();
}
