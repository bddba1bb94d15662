// Wire messages for the armctl teleop protocol: newline-delimited JSON.
// Shapes mirror protocol/messages.schema.json; incoming frames are checked
// leniently (unknown fields ignored, bad frames dropped by the session).

export interface EePose {
  pos: [number, number, number];
  quat: [number, number, number, number]; // (w, x, y, z)
}

export interface StateMessage {
  type: "state";
  t: number;
  q: number[];
  dq: number[];
  ee_pose: EePose;
  e_pos: number;
  e_rot: number;
  tau: number[];
  wrench: number[];
}

export interface ParamAckMessage {
  type: "param_ack";
  results: Record<string, string>;
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerMessage = StateMessage | ParamAckMessage | ErrorMessage;

export type ParamValue = number | boolean | string | number[] | null;

export interface TargetPoseMessage {
  type: "target_pose";
  payload: EePose;
  stamp: number;
}

export interface SetParamsMessage {
  type: "set_params";
  payload: Record<string, ParamValue>;
  stamp: number;
}

export type CommandMessage = TargetPoseMessage | SetParamsMessage;

export function encodeLine(msg: CommandMessage): string {
  return JSON.stringify(msg);
}

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function isNumberArray(x: unknown, length?: number): x is number[] {
  return (
    Array.isArray(x) &&
    (length === undefined || x.length === length) &&
    x.length > 0 &&
    x.every(isFiniteNumber)
  );
}

// Parse one incoming line; returns null for anything malformed so the
// session can drop the frame and keep running.
export function parseServerLine(line: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  if (msg.type === "state") {
    const pose = msg.ee_pose as Record<string, unknown> | undefined;
    if (
      !isFiniteNumber(msg.t) ||
      !isNumberArray(msg.q) ||
      !isNumberArray(msg.dq, (msg.q as number[]).length) ||
      !isNumberArray(msg.tau, (msg.q as number[]).length) ||
      !isNumberArray(msg.wrench, 6) ||
      !isFiniteNumber(msg.e_pos) ||
      !isFiniteNumber(msg.e_rot) ||
      pose === undefined ||
      !isNumberArray(pose.pos, 3) ||
      !isNumberArray(pose.quat, 4)
    ) {
      return null;
    }
    return {
      type: "state",
      t: msg.t,
      q: msg.q as number[],
      dq: msg.dq as number[],
      ee_pose: {
        pos: pose.pos as [number, number, number],
        quat: pose.quat as [number, number, number, number],
      },
      e_pos: msg.e_pos,
      e_rot: msg.e_rot,
      tau: msg.tau as number[],
      wrench: msg.wrench as number[],
    };
  }
  if (msg.type === "param_ack") {
    const results = msg.results;
    if (typeof results !== "object" || results === null) return null;
    for (const value of Object.values(results)) {
      if (typeof value !== "string") return null;
    }
    return { type: "param_ack", results: results as Record<string, string> };
  }
  if (msg.type === "error") {
    if (typeof msg.message !== "string") return null;
    return { type: "error", message: msg.message };
  }
  return null;
}
