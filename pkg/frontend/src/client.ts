// Glue between a line transport and the pure session reducer: dispatches
// events, transmits whatever the reducer emits, and notifies the renderer.

import { encodeLine } from "./protocol.js";
import {
  DEFAULT_OPTIONS,
  JogAxis,
  ParamValue,
  SessionOptions,
  UiEvent,
  UiSessionState,
  initialState,
  reduce,
} from "./session.js";

export type ParamValueIn = ParamValue;

export interface JogClientOptions {
  send: (line: string) => boolean;
  onChange?: (state: UiSessionState) => void;
  now?: () => number; // seconds, for command stamps
  session?: SessionOptions;
}

export class JogClient {
  state: UiSessionState = initialState();
  readonly eventLog: UiEvent[] = [];
  sentLines: number = 0;
  private readonly sendLine: (line: string) => boolean;
  private readonly onChange?: (state: UiSessionState) => void;
  private readonly now: () => number;
  private readonly options: SessionOptions;

  constructor(options: JogClientOptions) {
    this.sendLine = options.send;
    this.onChange = options.onChange;
    this.now = options.now ?? (() => Date.now() / 1000);
    this.options = options.session ?? DEFAULT_OPTIONS;
  }

  dispatch(event: UiEvent): void {
    this.eventLog.push(event);
    const { state, outgoing } = reduce(this.state, event, this.options);
    this.state = state;
    for (const msg of outgoing) {
      if (this.sendLine(encodeLine(msg))) {
        this.sentLines += 1;
      } else {
        this.state = {
          ...this.state,
          warnings: this.state.warnings.concat(["send failed (socket not open)"]),
        };
      }
    }
    this.onChange?.(this.state);
  }

  // transport hooks
  connected(): void {
    this.dispatch({ kind: "connected" });
  }

  disconnected(): void {
    this.dispatch({ kind: "disconnected" });
  }

  feedLine(line: string): void {
    this.dispatch({ kind: "frame", line });
  }

  // user input
  jog(axis: JogAxis, delta: number): void {
    this.dispatch({ kind: "jog", axis, delta, stamp: this.now() });
  }

  tune(key: string, value: ParamValue): void {
    this.dispatch({ kind: "tune", key, value, stamp: this.now() });
  }
}
