"""Fixed-step forward-dynamics simulator for closed-loop validation.

A run is a pure function of its inputs: stepping uses no wall clock and no
global RNG, so identical (model, config, targets, params) produce
bit-identical logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .controllers import Controller, ControllerParams, TargetCommand
from .errors import NonFiniteState
from .geometry import matrix_to_quat
from .urdf import RobotModel

SEMI_IMPLICIT_EULER, RK4 = "semi_implicit_euler", "rk4"


@dataclass
class Disturbance:
    """External tip wrench (base frame) active on [start, end)."""

    start: float
    end: float
    wrench: np.ndarray

    def __post_init__(self):
        self.wrench = np.asarray(self.wrench, dtype=float).reshape(6)


@dataclass
class SimConfig:
    dt: float = 0.001
    gravity: object = None  # None -> model gravity
    joint_viscous_damping: object = 0.0
    integrator: str = SEMI_IMPLICIT_EULER
    disturbances: list = field(default_factory=list)

    def validate(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        if np.any(np.asarray(self.joint_viscous_damping) < 0.0):
            raise ValueError("joint_viscous_damping must be >= 0")
        if self.integrator not in (SEMI_IMPLICIT_EULER, RK4):
            raise ValueError(f"unknown integrator {self.integrator!r}")


@dataclass
class SimState:
    t: float
    q: np.ndarray
    dq: np.ndarray
    last_tau: np.ndarray
    ee_wrench_estimate: np.ndarray
    torque_clamped: bool = False
    limit_breached: bool = False

    @classmethod
    def initial(cls, model: RobotModel, q0=None):
        q0 = np.zeros(model.dof) if q0 is None else np.asarray(q0, dtype=float).reshape(-1)
        return cls(0.0, q0, np.zeros(model.dof), np.zeros(model.dof), np.zeros(6))


def active_wrench(config: SimConfig, t: float) -> np.ndarray:
    """Sum of scheduled disturbances active at time t."""
    w = np.zeros(6)
    for d in config.disturbances:
        if d.start <= t < d.end:
            w = w + d.wrench
    return w


def step(model: RobotModel, state: SimState, tau, config: SimConfig) -> SimState:
    """Advance the simulation by one dt with the configured integrator.

    Torques beyond the model effort limits are clamped and flagged. The
    simulated wrench sensor reports the injected disturbance exactly.
    """
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if not np.all(np.isfinite(tau)):
        raise NonFiniteState(f"non-finite torque command at t={state.t:.4f}: {tau}")
    clamped = bool(np.any(np.abs(tau) > model.effort_limits + 1e-12))
    tau = np.clip(tau, -model.effort_limits, model.effort_limits)
    damping = np.asarray(config.joint_viscous_damping, dtype=float)
    gravity = config.gravity
    ext = active_wrench(config, state.t)

    def accel(q, dq):
        return dynamics.forward_dynamics(model, q, dq, tau - damping * dq,
                                         ext_wrench=ext, gravity=gravity)

    dt = config.dt
    if config.integrator == SEMI_IMPLICIT_EULER:
        ddq = accel(state.q, state.dq)
        dq_new = state.dq + dt * ddq
        q_new = state.q + dt * dq_new
    else:  # rk4 on (q, dq) with tau and ext held over the step
        q, dq = state.q, state.dq
        k1q, k1v = dq, accel(q, dq)
        k2q, k2v = dq + 0.5 * dt * k1v, accel(q + 0.5 * dt * k1q, dq + 0.5 * dt * k1v)
        k3q, k3v = dq + 0.5 * dt * k2v, accel(q + 0.5 * dt * k2q, dq + 0.5 * dt * k2v)
        k4q, k4v = dq + dt * k3v, accel(q + dt * k3q, dq + dt * k3v)
        q_new = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        dq_new = dq + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)

    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(dq_new))):
        raise NonFiniteState(
            f"non-finite state at t={state.t:.4f}: q={q_new}, dq={dq_new}, tau={tau}")
    breached = bool(np.any(q_new < model.lower_limits) or np.any(q_new > model.upper_limits))
    return SimState(state.t + dt, q_new, dq_new, tau, ext.copy(),
                    torque_clamped=clamped, limit_breached=breached)


@dataclass
class TrajectoryLog:
    """Per-tick closed-loop record with CSV serialization."""

    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    tau: np.ndarray
    ee_pos: np.ndarray
    ee_quat: np.ndarray
    e_pos: np.ndarray
    e_rot: np.ndarray
    limit_breach_ticks: int = 0
    torque_clamp_ticks: int = 0

    @property
    def dof(self):
        return self.q.shape[1]

    def header(self) -> str:
        dof = self.dof
        cols = (["t"]
                + [f"q{i}" for i in range(dof)]
                + [f"dq{i}" for i in range(dof)]
                + [f"tau{i}" for i in range(dof)]
                + ["x", "y", "z", "qw", "qx", "qy", "qz",
                   "epx", "epy", "epz", "erx", "ery", "erz"])
        return ",".join(cols)

    def write_csv(self, path):
        rows = [self.header()]
        for k in range(self.t.shape[0]):
            vals = ([self.t[k]] + list(self.q[k]) + list(self.dq[k]) + list(self.tau[k])
                    + list(self.ee_pos[k]) + list(self.ee_quat[k])
                    + list(self.e_pos[k]) + list(self.e_rot[k]))
            rows.append(",".join(repr(float(v)) for v in vals))
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


def run_closed_loop(model: RobotModel, params: ControllerParams, target_stream,
                    duration: float, config: SimConfig | None = None,
                    q0=None, controller: Controller | None = None) -> TrajectoryLog:
    """Run the controller against the simulator for `duration` seconds.

    target_stream is an iterable of (time, TargetCommand) with non-decreasing
    times; each command is delivered to the controller mailbox at the first
    control tick at or after its timestamp (latest delivery wins within a
    tick, matching the live protocol).
    """
    config = config or SimConfig()
    config.validate()
    stream = sorted(target_stream, key=lambda item: item[0])
    times = [item[0] for item in stream]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("target stream times must be non-decreasing")

    controller = controller or Controller(model, params)
    state = SimState.initial(model, q0)
    n_ticks = int(round(duration / config.dt))
    dof = model.dof

    t_log = np.empty(n_ticks)
    q_log = np.empty((n_ticks, dof))
    dq_log = np.empty((n_ticks, dof))
    tau_log = np.empty((n_ticks, dof))
    pos_log = np.empty((n_ticks, 3))
    quat_log = np.empty((n_ticks, 4))
    epos_log = np.empty((n_ticks, 3))
    erot_log = np.empty((n_ticks, 3))
    breaches = clamps = 0

    cursor = 0
    for k in range(n_ticks):
        t = k * config.dt
        while cursor < len(stream) and stream[cursor][0] <= t:
            controller.mailbox.put(stream[cursor][1])
            cursor += 1
        tau = controller.compute_command(state.q, state.dq)
        t_log[k] = t
        q_log[k] = state.q
        dq_log[k] = state.dq
        tau_log[k] = tau
        pos_log[k] = controller.last_pose.position
        quat_log[k] = matrix_to_quat(controller.last_pose.rotation)
        epos_log[k] = controller.last_error.e_pos
        erot_log[k] = controller.last_error.e_rot
        state = step(model, state, tau, config)
        breaches += int(state.limit_breached)
        clamps += int(state.torque_clamped)

    return TrajectoryLog(t_log, q_log, dq_log, tau_log, pos_log, quat_log,
                         epos_log, erot_log,
                         limit_breach_ticks=breaches, torque_clamp_ticks=clamps)
