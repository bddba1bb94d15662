// DOM panel: connection banner, numeric readouts, strip charts, torque and
// wrench bars, jog buttons with repeat-fire, and parameter controls with
// applied/rejected badges.

import { StripChart, renderBars } from "./charts.js";
import { JogClient } from "./client.js";
import { JogRepeater } from "./jog.js";
import { JogAxis, ParamValue, UiSessionState } from "./session.js";

const JOG_AXES: { axis: JogAxis; label: string; delta: number }[] = [
  { axis: 0, label: "x", delta: 0.01 },
  { axis: 1, label: "y", delta: 0.01 },
  { axis: 2, label: "z", delta: 0.01 },
  { axis: 3, label: "roll", delta: 0.02 },
  { axis: 4, label: "pitch", delta: 0.02 },
  { axis: 5, label: "yaw", delta: 0.02 },
];

const TUNABLE_NUMBERS: { key: string; min: number; max: number; step: number }[] = [
  { key: "ema_alpha", min: 0.01, max: 1.0, step: 0.01 },
  { key: "kp_nullspace", min: 0.0, max: 50.0, step: 0.5 },
  { key: "kd_nullspace", min: 0.0, max: 10.0, step: 0.1 },
];

const ENABLE_FLAGS = ["enable_task", "enable_nullspace", "enable_barrier",
                      "enable_gravity", "enable_coriolis", "enable_friction",
                      "enable_wrench"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export class Panel {
  private banner!: HTMLElement;
  private readouts!: HTMLElement;
  private warnings!: HTMLElement;
  private paramBadges = new Map<string, HTMLElement>();
  private posChart!: StripChart;
  private rotChart!: StripChart;
  private tauCanvas!: HTMLCanvasElement;
  private wrenchCanvas!: HTMLCanvasElement;
  readonly repeater: JogRepeater;

  constructor(private readonly root: HTMLElement,
              private readonly client: JogClient,
              repeatRateHz = 30) {
    this.repeater = new JogRepeater({
      rateHz: repeatRateHz,
      fire: (axis, delta) => this.client.jog(axis, delta),
    });
    this.build();
  }

  private build(): void {
    this.banner = el("div", { class: "banner" }, "connecting...");
    this.root.appendChild(this.banner);

    const grid = el("div", { class: "grid" });
    this.root.appendChild(grid);

    const posCanvas = el("canvas", { width: "420", height: "90" });
    const rotCanvas = el("canvas", { width: "420", height: "90" });
    this.posChart = new StripChart(posCanvas, (s) => s.ePos,
      { stroke: "#4fc3f7", background: "#111", label: "|e_pos| m" });
    this.rotChart = new StripChart(rotCanvas, (s) => s.eRot,
      { stroke: "#ffb74d", background: "#111", label: "|e_rot| rad" });
    this.tauCanvas = el("canvas", { width: "420", height: "70" });
    this.wrenchCanvas = el("canvas", { width: "420", height: "70" });
    for (const [title, canvas] of [
      ["position error", posCanvas], ["rotation error", rotCanvas],
      ["joint torques", this.tauCanvas], ["ee wrench", this.wrenchCanvas],
    ] as const) {
      const box = el("div", { class: "chart" });
      box.appendChild(el("h4", {}, title));
      box.appendChild(canvas);
      grid.appendChild(box);
    }

    this.readouts = el("pre", { class: "readouts" });
    grid.appendChild(this.readouts);

    const jogBox = el("div", { class: "jog" });
    jogBox.appendChild(el("h4", {}, "jog target (hold to repeat)"));
    for (const { axis, label, delta } of JOG_AXES) {
      for (const sign of [+1, -1]) {
        const button = el("button", {}, `${sign > 0 ? "+" : "-"}${label}`);
        const start = () => this.repeater.hold(axis, sign * delta);
        const stop = () => this.repeater.release(axis);
        button.addEventListener("mousedown", start);
        button.addEventListener("touchstart", start);
        for (const evt of ["mouseup", "mouseleave", "touchend"]) {
          button.addEventListener(evt, stop);
        }
        jogBox.appendChild(button);
      }
    }
    grid.appendChild(jogBox);

    const tuneBox = el("div", { class: "tune" });
    tuneBox.appendChild(el("h4", {}, "parameters"));
    for (const spec of TUNABLE_NUMBERS) {
      const row = el("div", { class: "param" });
      row.appendChild(el("label", {}, spec.key));
      const input = el("input", {
        type: "range", min: String(spec.min), max: String(spec.max),
        step: String(spec.step),
      });
      input.addEventListener("change", () =>
        this.client.tune(spec.key, Number(input.value)));
      row.appendChild(input);
      const badge = el("span", { class: "badge" });
      this.paramBadges.set(spec.key, badge);
      row.appendChild(badge);
      tuneBox.appendChild(row);
    }
    const projRow = el("div", { class: "param" });
    projRow.appendChild(el("label", {}, "projector"));
    const select = el("select");
    for (const value of ["static", "dynamic", "identity"]) {
      select.appendChild(el("option", { value }, value));
    }
    select.addEventListener("change", () =>
      this.client.tune("projector", select.value));
    projRow.appendChild(select);
    const projBadge = el("span", { class: "badge" });
    this.paramBadges.set("projector", projBadge);
    projRow.appendChild(projBadge);
    tuneBox.appendChild(projRow);
    for (const key of ENABLE_FLAGS) {
      const row = el("div", { class: "param" });
      const box = el("input", { type: "checkbox" });
      box.addEventListener("change", () => this.client.tune(key, box.checked));
      row.appendChild(box);
      row.appendChild(el("label", {}, key));
      const badge = el("span", { class: "badge" });
      this.paramBadges.set(key, badge);
      row.appendChild(badge);
      tuneBox.appendChild(row);
    }
    grid.appendChild(tuneBox);

    this.warnings = el("pre", { class: "warnings" });
    this.root.appendChild(this.warnings);
  }

  render(state: UiSessionState): void {
    this.banner.textContent =
      state.connection === "connected"
        ? "connected"
        : state.connection === "connecting"
          ? "connecting..."
          : "DISCONNECTED - retrying";
    this.banner.className = `banner ${state.connection}`;

    const s = state.lastState;
    if (s !== null) {
      const fmt = (xs: number[]) => xs.map((v) => v.toFixed(3)).join(" ");
      this.readouts.textContent = [
        `t      ${s.t.toFixed(3)} s`,
        `q      ${fmt(s.q)}`,
        `dq     ${fmt(s.dq)}`,
        `ee pos ${fmt(s.ee_pose.pos)}`,
        `ee quat ${fmt(s.ee_pose.quat)}`,
        state.target !== null
          ? `target ${fmt(state.target.pos)} rpy ${fmt(state.target.euler)}`
          : "target (waiting for state)",
        `dropped frames ${state.droppedFrames}`,
      ].join("\n");
      this.posChart.render(state.history);
      this.rotChart.render(state.history);
      renderBars(this.tauCanvas, s.tau, Math.max(...s.tau.map(Math.abs), 1), "#81c784");
      renderBars(this.wrenchCanvas, s.wrench, Math.max(...s.wrench.map(Math.abs), 1), "#e57373");
    }
    for (const [key, badge] of this.paramBadges) {
      const edit = state.params[key];
      if (edit === undefined) {
        badge.textContent = "";
        continue;
      }
      badge.textContent = edit.status === "rejected"
        ? `rejected: ${edit.reason ?? ""}` : edit.status;
      badge.className = `badge ${edit.status}`;
    }
    const tail = (xs: string[]) => xs.slice(-5).join("\n");
    this.warnings.textContent =
      [tail(state.warnings), tail(state.serverErrors)].filter(Boolean).join("\n");
  }
}
