"""Networked state/command endpoint for live teleoperation.

Transport: persistent TCP stream of newline-delimited JSON objects (one
message per line, UTF-8). The server broadcasts StateMessages at a fixed
rate and forwards validated commands to the control loop through the
latest-wins mailbox; see docs/protocol.md for schemas and examples.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import fields as dataclass_fields

import numpy as np

from .controllers import Controller, ControllerParams, TargetCommand
from .errors import BindError, MalformedMessage
from .geometry import Pose, matrix_to_quat, quat_to_matrix
from .sim import SimConfig, SimState, step
from .urdf import RobotModel

STATE_TYPE = "state"
COMMAND_TYPES = ("target_pose", "target_joint", "target_wrench", "set_params")
DEFAULT_STATE_RATE = 30.0

_PARAM_KEYS = {f.name for f in dataclass_fields(ControllerParams)}


# --- encoding ------------------------------------------------------------------


def encode_message(msg: dict) -> bytes:
    """Canonical single-line JSON encoding, newline terminated."""
    return json.dumps(msg, separators=(",", ":"), sort_keys=False).encode() + b"\n"


def decode_message(data: bytes) -> dict:
    """Parse and validate one message line; unknown fields are dropped.

    Raises MalformedMessage (with byte offset for JSON syntax errors).
    """
    try:
        raw = json.loads(data.decode("utf-8", errors="strict"))
    except UnicodeDecodeError as exc:
        raise MalformedMessage(f"invalid UTF-8: {exc}", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise MalformedMessage(f"invalid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(raw, dict):
        raise MalformedMessage("message must be a JSON object")
    mtype = raw.get("type")
    if mtype == STATE_TYPE:
        return _validate_state(raw)
    if mtype in COMMAND_TYPES:
        return _validate_command(raw)
    if mtype in ("param_ack", "error"):
        return {k: raw[k] for k in raw if k in ("type", "results", "message")}
    raise MalformedMessage(f"unknown message type {mtype!r}")


def _numbers(value, n, what):
    if not isinstance(value, (list, tuple)) or (n is not None and len(value) != n) \
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       for v in value):
        raise MalformedMessage(f"{what} must be a list of {n or 'N'} numbers")
    return [float(v) for v in value]


def _validate_state(raw: dict) -> dict:
    try:
        pose = raw["ee_pose"]
        out = {
            "type": STATE_TYPE,
            "t": float(raw["t"]),
            "q": _numbers(raw["q"], None, "q"),
            "dq": _numbers(raw["dq"], len(raw["q"]), "dq"),
            "ee_pose": {"pos": _numbers(pose["pos"], 3, "ee_pose.pos"),
                        "quat": _numbers(pose["quat"], 4, "ee_pose.quat")},
            "e_pos": float(raw["e_pos"]),
            "e_rot": float(raw["e_rot"]),
            "tau": _numbers(raw["tau"], len(raw["q"]), "tau"),
            "wrench": _numbers(raw["wrench"], 6, "wrench"),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedMessage(f"bad state message: {exc}") from exc
    quat = np.asarray(out["ee_pose"]["quat"])
    if abs(np.linalg.norm(quat) - 1.0) > 1e-6:
        raise MalformedMessage("ee_pose.quat is not unit norm")
    return out


def _validate_command(raw: dict) -> dict:
    payload = raw.get("payload")
    if not isinstance(payload, dict):
        raise MalformedMessage("command payload must be an object")
    mtype = raw["type"]
    try:
        stamp = float(raw.get("stamp", 0.0))
    except (TypeError, ValueError) as exc:
        raise MalformedMessage("stamp must be a number") from exc
    if mtype == "target_pose":
        pos = _numbers(payload.get("pos"), 3, "payload.pos")
        quat = _numbers(payload.get("quat"), 4, "payload.quat")
        if np.linalg.norm(quat) < 1e-12:
            raise MalformedMessage("payload.quat has zero norm")
        payload = {"pos": pos, "quat": quat}
    elif mtype == "target_joint":
        q = _numbers(payload.get("q"), None, "payload.q")
        out_payload = {"q": q}
        if payload.get("dq") is not None:
            out_payload["dq"] = _numbers(payload["dq"], len(q), "payload.dq")
        payload = out_payload
    elif mtype == "target_wrench":
        payload = {"wrench": _numbers(payload.get("wrench"), 6, "payload.wrench")}
    elif mtype == "set_params":
        if not payload:
            raise MalformedMessage("set_params payload is empty")
        if not all(isinstance(k, str) for k in payload):
            raise MalformedMessage("set_params keys must be strings")
    return {"type": mtype, "payload": payload, "stamp": stamp}


def command_to_target(msg: dict) -> TargetCommand:
    """Decoded command message to a controller TargetCommand."""
    payload, stamp = msg["payload"], msg["stamp"]
    if msg["type"] == "target_pose":
        pose = Pose(np.array(payload["pos"]), quat_to_matrix(payload["quat"]))
        return TargetCommand("target_pose", pose=pose, stamp=stamp)
    if msg["type"] == "target_joint":
        return TargetCommand("target_joint", q_target=np.array(payload["q"]),
                             dq_target=np.array(payload["dq"]) if "dq" in payload else None,
                             stamp=stamp)
    if msg["type"] == "target_wrench":
        return TargetCommand("target_wrench", wrench=np.array(payload["wrench"]),
                             stamp=stamp)
    raise ValueError(f"not a target command: {msg['type']!r}")


# --- clocks ---------------------------------------------------------------------


class WallClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep_until(self, t: float, should_stop=lambda: False):
        while not should_stop():
            remaining = t - self.now()
            if remaining <= 0.0:
                return
            time.sleep(min(remaining, 0.05))


class VirtualClock:
    """Deterministic clock for tests: time moves only via advance()."""

    def __init__(self):
        self._t = 0.0
        self._cond = threading.Condition()

    def now(self) -> float:
        with self._cond:
            return self._t

    def advance(self, dt: float):
        with self._cond:
            self._t += dt
            self._cond.notify_all()

    def sleep_until(self, t: float, should_stop=lambda: False):
        with self._cond:
            while self._t < t and not should_stop():
                self._cond.wait(timeout=0.5)


# --- live session -----------------------------------------------------------------


class SimSession:
    """Simulated robot driven by the control loop, steppable on demand.

    The pump thread owns stepping; snapshots are immutable copies handed to
    the broadcaster. Command submission only touches the mailbox and the
    pending-params queue, so it never blocks the loop.
    """

    def __init__(self, model: RobotModel, params: ControllerParams,
                 sim_config: SimConfig | None = None, q0=None):
        self.model = model
        self.controller = Controller(model, params)
        self.config = sim_config or SimConfig()
        self.config.validate()
        self.state = SimState.initial(model, q0)
        self._snapshot_lock = threading.Lock()
        self._snapshot = None
        self.step_once()  # populate pose/error before the first broadcast

    @property
    def t(self) -> float:
        return self.state.t

    def step_once(self):
        tau = self.controller.compute_command(self.state.q, self.state.dq)
        self.state = step(self.model, self.state, tau, self.config)
        ctrl = self.controller
        msg = {
            "type": STATE_TYPE,
            "t": round(self.state.t, 9),
            "q": [float(v) for v in self.state.q],
            "dq": [float(v) for v in self.state.dq],
            "ee_pose": {
                "pos": [float(v) for v in ctrl.last_pose.position],
                "quat": [float(v) for v in matrix_to_quat(ctrl.last_pose.rotation)],
            },
            "e_pos": float(np.linalg.norm(ctrl.last_error.e_pos)),
            "e_rot": float(np.linalg.norm(ctrl.last_error.e_rot)),
            "tau": [float(v) for v in self.state.last_tau],
            "wrench": [float(v) for v in self.state.ee_wrench_estimate],
        }
        with self._snapshot_lock:
            self._snapshot = msg

    def step_to(self, t_sim: float):
        while self.state.t < t_sim - 1e-12:
            self.step_once()

    def snapshot(self) -> dict:
        with self._snapshot_lock:
            return self._snapshot

    def submit(self, msg: dict) -> str | None:
        """Admit a validated command message; returns a rejection reason or None."""
        kind = msg["type"]
        if kind == "set_params":
            raise ValueError("set_params is handled by the server, not submit()")
        cmd = command_to_target(msg)
        if cmd.kind == "target_joint" and cmd.q_target.shape[0] != self.model.dof:
            return f"q has length {cmd.q_target.shape[0]}, expected {self.model.dof}"
        self.controller.mailbox.put(cmd)
        return None

    def apply_params(self, payload: dict) -> dict:
        """Per-key applied/rejected results for a set_params payload."""
        results = {}
        for key, value in payload.items():
            if key not in _PARAM_KEYS:
                results[key] = f"rejected: unknown parameter {key!r}"
                continue
            error = self.controller.try_param_update(key, value)
            results[key] = "applied" if error is None else f"rejected: {error}"
        return results


class TeleopServer:
    """TCP server: one acceptor, one reader per client, one pump/broadcast thread."""

    def __init__(self, session: SimSession, bind=("127.0.0.1", 0),
                 state_rate: float = DEFAULT_STATE_RATE, clock=None,
                 realtime: bool = True):
        if state_rate <= 0.0:
            raise ValueError("state_rate must be > 0")
        self.session = session
        self.state_rate = float(state_rate)
        self.clock = clock or WallClock()
        self.realtime = realtime
        self._stop = threading.Event()
        self._clients: list[socket.socket] = []
        self._clients_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        try:
            self._sock = socket.create_server(bind)
        except OSError as exc:
            raise BindError(f"cannot bind {bind[0]}:{bind[1]}: {exc}") from exc
        self._sock.settimeout(0.2)

    @property
    def address(self):
        return self._sock.getsockname()

    @property
    def client_count(self) -> int:
        with self._clients_lock:
            return len(self._clients)

    # -- lifecycle ---------------------------------------------------------------

    def start(self):
        for target, name in ((self._accept_loop, "teleop-accept"),
                             (self._pump_loop, "teleop-pump")):
            thread = threading.Thread(target=target, name=name, daemon=True)
            thread.start()
            self._threads.append(thread)
        return self

    def stop(self):
        self._stop.set()
        with self._clients_lock:
            clients, self._clients = self._clients[:], []
        for client in clients:
            _close(client)
        self._sock.close()
        for thread in self._threads:
            thread.join(timeout=2.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- broadcast / stepping ------------------------------------------------------

    def _pump_loop(self):
        period = 1.0 / self.state_rate
        epoch = self.clock.now()
        sim_epoch = self.session.t
        k = 0
        while not self._stop.is_set():
            k += 1
            target_sim_t = sim_epoch + k * period
            try:
                self.session.step_to(target_sim_t)
            except Exception:  # NonFiniteState etc: stop serving, keep sockets alive
                self._stop.set()
                return
            if self.realtime:
                self.clock.sleep_until(epoch + k * period, self._stop.is_set)
            self._broadcast(encode_message(self.session.snapshot()))

    def _broadcast(self, data: bytes):
        with self._clients_lock:
            clients = self._clients[:]
        dead = []
        for client in clients:
            try:
                client.sendall(data)
            except OSError:
                dead.append(client)
        if dead:
            with self._clients_lock:
                for client in dead:
                    if client in self._clients:
                        self._clients.remove(client)
                    _close(client)

    # -- client handling -------------------------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                client, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            client.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._clients_lock:
                self._clients.append(client)
            thread = threading.Thread(target=self._client_loop, args=(client,),
                                      name="teleop-client", daemon=True)
            thread.start()
            self._threads.append(thread)

    def _client_loop(self, client: socket.socket):
        buffer = b""
        while not self._stop.is_set():
            try:
                chunk = client.recv(4096)
            except OSError:
                break
            if not chunk:
                break
            buffer += chunk
            while b"\n" in buffer:
                line, buffer = buffer.split(b"\n", 1)
                if line.strip():
                    self._handle_line(client, line)
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)
        _close(client)

    def _handle_line(self, client: socket.socket, line: bytes):
        try:
            msg = decode_message(line)
        except MalformedMessage as exc:
            self._reply(client, {"type": "error", "message": str(exc)})
            return
        if msg["type"] == "set_params":
            results = self.session.apply_params(msg["payload"])
            self._reply(client, {"type": "param_ack", "results": results})
        elif msg["type"] in ("target_pose", "target_joint", "target_wrench"):
            error = self.session.submit(msg)
            if error is not None:
                self._reply(client, {"type": "error", "message": error})
        else:
            self._reply(client, {"type": "error",
                                 "message": f"cannot handle message type {msg['type']!r}"})

    def _reply(self, client: socket.socket, msg: dict):
        try:
            client.sendall(encode_message(msg))
        except OSError:
            pass


def _close(sock: socket.socket):
    try:
        sock.close()
    except OSError:
        pass


def serve(session: SimSession, bind=("127.0.0.1", 7465),
          state_rate: float = DEFAULT_STATE_RATE, clock=None,
          realtime: bool = True) -> TeleopServer:
    """Start a teleoperation server around a running sim session."""
    return TeleopServer(session, bind=bind, state_rate=state_rate,
                        clock=clock, realtime=realtime).start()
