// UI session core: a pure reducer over (received frames, user input).
// Rendering and transport live elsewhere, so the whole session is
// replayable from an event log in tests.

import { eulerToQuat, quatToEuler, wrapAngle, Euler } from "./euler.js";
import {
  CommandMessage,
  ParamValue,
  StateMessage,
  parseServerLine,
} from "./protocol.js";

export type { ParamValue } from "./protocol.js";

export type Connection = "connecting" | "connected" | "disconnected";

export type JogAxis = 0 | 1 | 2 | 3 | 4 | 5; // x, y, z, roll, pitch, yaw

export interface EditedTarget {
  pos: [number, number, number];
  euler: Euler;
}

export interface ParamEdit {
  value: ParamValue;
  status: "pending" | "applied" | "rejected";
  reason?: string;
}

export interface ErrorSample {
  t: number;
  ePos: number;
  eRot: number;
}

export interface UiSessionState {
  connection: Connection;
  lastState: StateMessage | null;
  target: EditedTarget | null;
  params: Record<string, ParamEdit>;
  history: ErrorSample[];
  warnings: string[];
  droppedFrames: number;
  serverErrors: string[];
}

export type UiEvent =
  | { kind: "connecting" }
  | { kind: "connected" }
  | { kind: "disconnected" }
  | { kind: "frame"; line: string }
  | { kind: "jog"; axis: JogAxis; delta: number; stamp: number }
  | { kind: "tune"; key: string; value: ParamValue; stamp: number };

export interface SessionOptions {
  historyLimit: number;
  warningLimit: number;
}

export const DEFAULT_OPTIONS: SessionOptions = {
  historyLimit: 600,
  warningLimit: 50,
};

export function initialState(): UiSessionState {
  return {
    connection: "connecting",
    lastState: null,
    target: null,
    params: {},
    history: [],
    warnings: [],
    droppedFrames: 0,
    serverErrors: [],
  };
}

export interface ReduceResult {
  state: UiSessionState;
  outgoing: CommandMessage[];
}

function pushCapped<T>(items: T[], item: T, limit: number): T[] {
  const out = items.concat([item]);
  return out.length > limit ? out.slice(out.length - limit) : out;
}

function targetMessage(target: EditedTarget, stamp: number): CommandMessage {
  return {
    type: "target_pose",
    payload: { pos: [...target.pos], quat: eulerToQuat(target.euler) },
    stamp,
  };
}

export function reduce(
  state: UiSessionState,
  event: UiEvent,
  options: SessionOptions = DEFAULT_OPTIONS,
): ReduceResult {
  switch (event.kind) {
    case "connecting":
      return { state: { ...state, connection: "connecting" }, outgoing: [] };
    case "connected":
      return { state: { ...state, connection: "connected" }, outgoing: [] };
    case "disconnected":
      return { state: { ...state, connection: "disconnected" }, outgoing: [] };

    case "frame": {
      const msg = parseServerLine(event.line);
      if (msg === null) {
        return {
          state: { ...state, droppedFrames: state.droppedFrames + 1 },
          outgoing: [],
        };
      }
      if (msg.type === "state") {
        const next: UiSessionState = {
          ...state,
          lastState: msg,
          history: pushCapped(
            state.history,
            { t: msg.t, ePos: msg.e_pos, eRot: msg.e_rot },
            options.historyLimit,
          ),
        };
        if (next.target === null) {
          next.target = {
            pos: [...msg.ee_pose.pos],
            euler: quatToEuler(msg.ee_pose.quat),
          };
        }
        return { state: next, outgoing: [] };
      }
      if (msg.type === "param_ack") {
        const params = { ...state.params };
        for (const [key, result] of Object.entries(msg.results)) {
          const edit = params[key];
          if (edit === undefined) continue;
          params[key] =
            result === "applied"
              ? { ...edit, status: "applied" }
              : { ...edit, status: "rejected", reason: result };
        }
        return { state: { ...state, params }, outgoing: [] };
      }
      return {
        state: {
          ...state,
          serverErrors: pushCapped(state.serverErrors, msg.message,
                                   options.warningLimit),
        },
        outgoing: [],
      };
    }

    case "jog": {
      if (state.connection !== "connected" || state.target === null) {
        return {
          state: {
            ...state,
            warnings: pushCapped(
              state.warnings,
              `jog dropped (${state.connection === "connected" ? "no state yet" : state.connection})`,
              options.warningLimit,
            ),
          },
          outgoing: [],
        };
      }
      const target: EditedTarget = {
        pos: [...state.target.pos],
        euler: [...state.target.euler] as Euler,
      };
      if (event.axis < 3) {
        const i = event.axis as 0 | 1 | 2;
        target.pos[i] += event.delta;
      } else {
        const i = (event.axis - 3) as 0 | 1 | 2;
        target.euler[i] = wrapAngle(target.euler[i] + event.delta);
      }
      return {
        state: { ...state, target },
        outgoing: [targetMessage(target, event.stamp)],
      };
    }

    case "tune": {
      if (state.connection !== "connected") {
        return {
          state: {
            ...state,
            warnings: pushCapped(state.warnings, "tune dropped (disconnected)",
                                 options.warningLimit),
          },
          outgoing: [],
        };
      }
      // no local application until the server acknowledges
      const params = {
        ...state.params,
        [event.key]: { value: event.value, status: "pending" as const },
      };
      return {
        state: { ...state, params },
        outgoing: [
          {
            type: "set_params",
            payload: { [event.key]: event.value },
            stamp: event.stamp,
          },
        ],
      };
    }
  }
}

// Fold a full event log; the result depends on nothing else.
export function replay(
  events: UiEvent[],
  options: SessionOptions = DEFAULT_OPTIONS,
): { state: UiSessionState; outgoing: CommandMessage[] } {
  let state = initialState();
  const outgoing: CommandMessage[] = [];
  for (const event of events) {
    const result = reduce(state, event, options);
    state = result.state;
    outgoing.push(...result.outgoing);
  }
  return { state, outgoing };
}
