"""Torque-level compliant control: task, nullspace, barrier, compensation,
friction, and wrench terms, composed into a single clamped command.

Each term can be switched on and off independently. The per-cycle evaluation
order is fixed: filter target -> compute error -> clip -> task -> nullspace ->
barrier -> compensation terms -> wrench -> sum -> torque/rate limiting.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import dynamics
from .dynamics import BASE, END_EFFECTOR, Jacobian
from .errors import DimensionMismatch
from .geometry import Pose, PoseError, exp_so3, log_so3, pose_error
from .urdf import RobotModel

CARTESIAN_IMPEDANCE, OSC = "cartesian_impedance", "osc"
PROJECTORS = ("static", "dynamic", "identity")

TARGET_POSE, TARGET_JOINT, TARGET_WRENCH = "target_pose", "target_joint", "target_wrench"


def _vec(value, size, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    arr = arr.reshape(-1)
    if arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


@dataclass
class ControllerParams:
    """Every gain, limit, flag, and frame choice of the control law.

    Vector-valued fields accept scalars (broadcast on `expand`). `kd=None`
    selects critical damping 2*sqrt(kp) per axis, a convenience default.
    """

    task_type: str = CARTESIAN_IMPEDANCE
    error_frame: str = BASE
    kp: object = field(default_factory=lambda: np.array([400.0] * 3 + [20.0] * 3))
    kd: object = None
    kp_nullspace: object = 10.0
    kd_nullspace: object = 2.0
    projector: str = "static"
    k_joint: object = 50.0
    barrier_margin: float = 0.1
    friction_phi1: object = 0.0
    friction_phi2: object = 0.0
    friction_phi3: object = 0.0
    wrench_target: object = field(default_factory=lambda: np.zeros(6))
    enable_task: bool = True
    enable_nullspace: bool = True
    enable_barrier: bool = True
    enable_gravity: bool = True
    enable_coriolis: bool = True
    enable_friction: bool = False
    enable_wrench: bool = False
    error_clip: object = field(default_factory=lambda: np.full(6, np.inf))
    ema_alpha: float = 1.0
    tau_limit: object = None
    tau_rate_limit: object = np.inf
    fb_kp: float = 0.0
    fb_kd: float = 0.0
    task_inertia_variant: str = "standard"
    damping: float = 1e-6

    def expand(self, model: RobotModel) -> "ControllerParams":
        """Broadcast vector fields to their full sizes and validate invariants."""
        dof = model.dof
        kp = _vec(self.kp, 6, "kp")
        if np.any(kp < 0.0):
            raise ValueError("kp entries must be >= 0")
        kd = 2.0 * np.sqrt(kp) if self.kd is None else _vec(self.kd, 6, "kd")
        tau_limit = model.effort_limits.copy() if self.tau_limit is None \
            else _vec(self.tau_limit, dof, "tau_limit")
        out = replace(
            self,
            kp=kp, kd=kd,
            kp_nullspace=_vec(self.kp_nullspace, dof, "kp_nullspace"),
            kd_nullspace=_vec(self.kd_nullspace, dof, "kd_nullspace"),
            k_joint=_vec(self.k_joint, dof, "k_joint"),
            friction_phi1=_vec(self.friction_phi1, dof, "friction_phi1"),
            friction_phi2=_vec(self.friction_phi2, dof, "friction_phi2"),
            friction_phi3=_vec(self.friction_phi3, dof, "friction_phi3"),
            wrench_target=_vec(self.wrench_target, 6, "wrench_target"),
            error_clip=_vec(self.error_clip, 6, "error_clip"),
            tau_limit=tau_limit,
            tau_rate_limit=_vec(self.tau_rate_limit, dof, "tau_rate_limit"),
        )
        out.validate(model)
        return out

    def validate(self, model: RobotModel):
        if self.task_type not in (CARTESIAN_IMPEDANCE, OSC):
            raise ValueError(f"unknown task_type {self.task_type!r}")
        if self.error_frame not in (BASE, END_EFFECTOR):
            raise ValueError(f"unknown error_frame {self.error_frame!r}")
        if self.projector not in PROJECTORS:
            raise ValueError(f"unknown projector {self.projector!r}")
        for name in ("kp", "kd", "kp_nullspace", "kd_nullspace", "k_joint"):
            if np.any(np.asarray(getattr(self, name)) < 0.0):
                raise ValueError(f"{name} entries must be >= 0")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError(f"ema_alpha must be in (0, 1], got {self.ema_alpha}")
        if self.barrier_margin <= 0.0:
            raise ValueError("barrier_margin must be > 0")
        half_span = 0.5 * (model.upper_limits - model.lower_limits)
        if self.enable_barrier and np.any(self.barrier_margin >= half_span):
            raise ValueError("barrier_margin must be below half the joint range")
        if np.any(np.asarray(self.error_clip) <= 0.0):
            raise ValueError("error_clip entries must be > 0 (inf disables)")
        if np.any(np.asarray(self.tau_limit) <= 0.0) \
                or np.any(np.asarray(self.tau_rate_limit) <= 0.0):
            raise ValueError("torque limits must be > 0")
        if np.any(np.asarray(self.tau_limit) > model.effort_limits + 1e-12):
            raise ValueError("tau_limit exceeds model effort limits")
        if self.task_inertia_variant not in ("standard", "paper"):
            raise ValueError(f"unknown task_inertia_variant {self.task_inertia_variant!r}")
        if self.projector == "identity" and self.enable_task and \
                (np.any(np.asarray(self.kp) > 0.0) or np.any(np.asarray(self.kd) > 0.0)):
            warnings.warn("identity projector with nonzero task gains: the secondary "
                          "joint law will fight the task term", stacklevel=2)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value = [float(x) for x in value]
            elif value is not None and not isinstance(value, (str, bool)):
                value = float(value) if np.isscalar(value) else value
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown controller parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TargetCommand:
    """Most recent target of one kind, timestamped by the sender."""

    kind: str
    pose: Pose | None = None
    q_target: np.ndarray | None = None
    dq_target: np.ndarray | None = None
    wrench: np.ndarray | None = None
    stamp: float = 0.0

    def __post_init__(self):
        present = {
            TARGET_POSE: self.pose is not None and self.q_target is None
            and self.wrench is None,
            TARGET_JOINT: self.q_target is not None and self.pose is None
            and self.wrench is None,
            TARGET_WRENCH: self.wrench is not None and self.pose is None
            and self.q_target is None,
        }
        if self.kind not in present:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if not present[self.kind]:
            raise ValueError(f"{self.kind} command must carry exactly its own payload")
        if self.q_target is not None:
            self.q_target = np.asarray(self.q_target, dtype=float).reshape(-1)
        if self.dq_target is not None:
            self.dq_target = np.asarray(self.dq_target, dtype=float).reshape(-1)
        if self.wrench is not None:
            self.wrench = np.asarray(self.wrench, dtype=float).reshape(6)


@dataclass
class ControllerState:
    """Per-loop mutable memory: EMA filter state, rate limiter, targets."""

    filtered_target: Pose | None = None
    previous_tau: np.ndarray | None = None
    last_command_stamp: float = 0.0
    raw_target: Pose | None = None
    q_target: np.ndarray | None = None
    dq_target: np.ndarray | None = None
    wrench_target: np.ndarray | None = None


class LatestMailbox:
    """Single-slot latest-wins handoff between a producer and the control loop.

    put() replaces any pending item; take() returns the newest item once or
    None. The lock is held only for the swap, never across user code.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._item = None

    def put(self, item):
        with self._lock:
            self._item = item

    def take(self):
        with self._lock:
            item, self._item = self._item, None
        return item


# --- individual torque terms -------------------------------------------------


def ci_task_torque(J: Jacobian, e: PoseError, dq, kp, kd) -> np.ndarray:
    """Virtual spring-damper to the target pose: J^T (Kp e - Kd J dq)."""
    if isinstance(J, Jacobian) and J.frame != e.frame:
        raise DimensionMismatch(f"Jacobian frame {J.frame!r} != error frame {e.frame!r}")
    Jm = J.matrix if isinstance(J, Jacobian) else J
    ev = e.as_vector()
    return Jm.T @ (kp * ev - kd * (Jm @ dq))


def osc_task_torque(model, q, J: Jacobian, e: PoseError, dq, kp, kd,
                    variant="standard", damping=dynamics.DEFAULT_DAMPING,
                    M=None) -> np.ndarray:
    """Inertia-weighted task law J^T Lambda (Kp e - Kd J dq).

    Coriolis/gravity are not folded into the task term; they are compensated
    in joint space by their own terms.
    """
    if isinstance(J, Jacobian) and J.frame != e.frame:
        raise DimensionMismatch(f"Jacobian frame {J.frame!r} != error frame {e.frame!r}")
    Jm = J.matrix if isinstance(J, Jacobian) else J
    lam = dynamics.task_inertia(model, q, Jm, variant=variant, damping=damping, M=M)
    ev = e.as_vector()
    return Jm.T @ (lam @ (kp * ev - kd * (Jm @ dq)))


def nullspace_projector(model, q, J: Jacobian, kind: str,
                        damping=dynamics.DEFAULT_DAMPING, M=None) -> np.ndarray:
    """N mapping secondary torques into the task null space."""
    Jm = J.matrix if isinstance(J, Jacobian) else J
    n = Jm.shape[1]
    if kind == "identity":
        return np.eye(n)
    if kind == "static":
        Jp = dynamics.damped_pseudoinverse(Jm, damping)
        return np.eye(n) - Jm.T @ Jp.T
    if kind == "dynamic":
        Jbar = dynamics.generalized_inverse(model, q, Jm, damping=damping, M=M)
        return np.eye(n) - Jm.T @ Jbar.T
    raise ValueError(f"unknown projector {kind!r}")


def nullspace_torque(model, q, dq, J: Jacobian, q_target, dq_target,
                     kp_ns, kd_ns, projector="static",
                     damping=dynamics.DEFAULT_DAMPING, M=None) -> np.ndarray:
    """Joint impedance toward (q_target, dq_target), projected by N."""
    dq_target = np.zeros_like(q) if dq_target is None else dq_target
    secondary = kp_ns * (q_target - q) + kd_ns * (dq_target - dq)
    N = nullspace_projector(model, q, J, projector, damping=damping, M=M)
    return N @ secondary


def barrier_torque(q, lower, upper, k_joint, margin) -> np.ndarray:
    """Repulsive torque inside `margin` of a joint limit, zero elsewhere."""
    tau = np.zeros_like(q)
    hi = q > upper - margin
    lo = q < lower + margin
    tau[hi] = -k_joint[hi] * (upper[hi] - q[hi])
    tau[lo] = -k_joint[lo] * (lower[lo] - q[lo])
    return tau


def friction_torque(dq, phi1, phi2, phi3) -> np.ndarray:
    """Sigmoidal friction model, exactly zero at zero velocity."""
    def sigmoid(u):
        return 1.0 / (1.0 + np.exp(-u))

    return phi1 * (sigmoid(phi2 * (dq + phi3)) - sigmoid(phi2 * phi3))


def wrench_torque(J: Jacobian, wrench) -> np.ndarray:
    """Joint torques realizing a tip wrench: J^T F (frames must agree)."""
    Jm = J.matrix if isinstance(J, Jacobian) else J
    wrench = np.asarray(wrench, dtype=float).reshape(-1)
    if wrench.shape[0] != 6:
        raise DimensionMismatch(f"wrench has length {wrench.shape[0]}, expected 6")
    return Jm.T @ wrench


def leader_feedback_torque(J_leader: Jacobian, follower_wrench, dq_leader,
                           fb_kp, fb_kd) -> np.ndarray:
    """Force reflection for the leader arm: -kp J^T F_follower - kd dq_leader."""
    Jm = J_leader.matrix if isinstance(J_leader, Jacobian) else J_leader
    follower_wrench = np.asarray(follower_wrench, dtype=float).reshape(6)
    dq_leader = np.asarray(dq_leader, dtype=float).reshape(-1)
    if Jm.shape[1] != dq_leader.shape[0]:
        raise DimensionMismatch("Jacobian and dq_leader disagree on dof")
    return -fb_kp * (Jm.T @ follower_wrench) - fb_kd * dq_leader


def ema_filter(state: ControllerState, raw_target: Pose, alpha: float) -> Pose:
    """One exponential-moving-average step toward the raw target.

    Positions blend linearly; rotations follow the geodesic:
    R <- R_prev Exp(alpha Log(R_prev^T R_raw)). Updates state.filtered_target.
    """
    prev = state.filtered_target
    if prev is None or alpha >= 1.0:
        filtered = raw_target
    else:
        p = alpha * raw_target.position + (1.0 - alpha) * prev.position
        R = prev.rotation @ exp_so3(alpha * log_so3(prev.rotation.T @ raw_target.rotation))
        filtered = Pose(p, R)
    state.filtered_target = filtered
    return filtered


def clip_error(e: PoseError, limits) -> PoseError:
    """Componentwise clamp of the 6-D error to +-limits (inf disables)."""
    limits = np.asarray(limits, dtype=float).reshape(6)
    return PoseError(np.clip(e.e_pos, -limits[0:3], limits[0:3]),
                     np.clip(e.e_rot, -limits[3:6], limits[3:6]), e.frame)


def limit_torque(tau, state: ControllerState, tau_limit, tau_rate_limit) -> np.ndarray:
    """Clamp torque magnitude, then its change per cycle; updates previous_tau."""
    tau = np.clip(tau, -tau_limit, tau_limit)
    if state.previous_tau is not None:
        delta = np.clip(tau - state.previous_tau, -tau_rate_limit, tau_rate_limit)
        tau = state.previous_tau + delta
    state.previous_tau = tau.copy()
    return tau


# --- composed controller ------------------------------------------------------


class Controller:
    """Single-arm torque controller evaluating the full control law each cycle.

    Target commands arrive through `mailbox` (latest-wins, written from other
    threads); parameter updates through `push_param_updates`. Both are drained
    at the start of each compute_command call, so the loop thread is the only
    mutator of controller state.
    """

    def __init__(self, model: RobotModel, params: ControllerParams | None = None):
        self.model = model
        self.params = (params or ControllerParams()).expand(model)
        self.state = ControllerState()
        self.mailbox = LatestMailbox()
        self._param_lock = threading.Lock()
        self._pending_params: dict = {}
        self.last_pose: Pose | None = None
        self.last_error: PoseError | None = None
        self.last_terms: dict = {}

    # -- command ingestion -----------------------------------------------------

    def ingest(self, cmd: TargetCommand):
        """Apply one target command to the controller state (loop thread only)."""
        if cmd.kind == TARGET_POSE:
            self.state.raw_target = cmd.pose
        elif cmd.kind == TARGET_JOINT:
            if cmd.q_target.shape[0] != self.model.dof:
                raise DimensionMismatch("q_target length != dof")
            self.state.q_target = cmd.q_target
            self.state.dq_target = cmd.dq_target
        elif cmd.kind == TARGET_WRENCH:
            self.state.wrench_target = cmd.wrench
        self.state.last_command_stamp = cmd.stamp

    def try_param_update(self, key: str, value) -> str | None:
        """Validate a live parameter update; queue it if valid.

        Returns None when accepted, otherwise a rejection reason. Safe to call
        from any thread; application happens at the next control cycle.
        """
        if key not in {f.name for f in fields(ControllerParams)}:
            return f"unknown parameter {key!r}"
        try:
            replace(self.params, **{key: value}).expand(self.model)
        except (ValueError, TypeError) as exc:
            return str(exc)
        with self._param_lock:
            self._pending_params[key] = value
        return None

    def _drain_param_updates(self):
        with self._param_lock:
            pending, self._pending_params = self._pending_params, {}
        if pending:
            merged = {f.name: getattr(self.params, f.name) for f in fields(ControllerParams)}
            merged.update(pending)
            self.params = ControllerParams(**merged).expand(self.model)

    # -- control law -----------------------------------------------------------

    def compute_command(self, q, dq) -> np.ndarray:
        """One control cycle: drain inputs, evaluate enabled terms, sum, limit."""
        q = np.asarray(q, dtype=float).reshape(-1)
        dq = np.asarray(dq, dtype=float).reshape(-1)
        if q.shape[0] != self.model.dof or dq.shape[0] != self.model.dof:
            raise DimensionMismatch("joint state length != dof")
        self._drain_param_updates()
        cmd = self.mailbox.take()
        if cmd is not None:
            self.ingest(cmd)
        p = self.params
        model = self.model

        current = dynamics.forward_kinematics(model, q)
        self.last_pose = current
        # no target yet: hold the current configuration
        if self.state.raw_target is None:
            self.state.raw_target = current
        if self.state.q_target is None:
            self.state.q_target = q.copy()

        target = ema_filter(self.state, self.state.raw_target, p.ema_alpha)
        J_base = dynamics.geometric_jacobian(model, q, BASE)
        if p.error_frame == END_EFFECTOR:
            RT = current.rotation.T
            J_task = Jacobian(np.vstack([RT @ J_base.matrix[0:3],
                                         RT @ J_base.matrix[3:6]]), END_EFFECTOR)
        else:
            J_task = J_base
        e_raw = pose_error(target, current, p.error_frame)
        self.last_error = pose_error(self.state.raw_target, current, p.error_frame)
        e = clip_error(e_raw, p.error_clip)

        needs_mass = (p.enable_task and p.task_type == OSC) or \
            (p.enable_nullspace and p.projector == "dynamic")
        M = dynamics.mass_matrix(model, q) if needs_mass else None

        terms = {}
        if p.enable_task:
            if p.task_type == OSC:
                terms["task"] = osc_task_torque(model, q, J_task, e, dq, p.kp, p.kd,
                                                variant=p.task_inertia_variant,
                                                damping=p.damping, M=M)
            else:
                terms["task"] = ci_task_torque(J_task, e, dq, p.kp, p.kd)
        if p.enable_nullspace:
            terms["nullspace"] = nullspace_torque(
                model, q, dq, J_task, self.state.q_target, self.state.dq_target,
                p.kp_nullspace, p.kd_nullspace, projector=p.projector,
                damping=p.damping, M=M)
        if p.enable_barrier:
            terms["barrier"] = barrier_torque(q, model.lower_limits, model.upper_limits,
                                              p.k_joint, p.barrier_margin)
        if p.enable_gravity:
            terms["gravity"] = dynamics.gravity_torque(model, q)
        if p.enable_coriolis:
            terms["coriolis"] = dynamics.coriolis_torque(model, q, dq)
        if p.enable_friction:
            terms["friction"] = friction_torque(dq, p.friction_phi1, p.friction_phi2,
                                                p.friction_phi3)
        if p.enable_wrench:
            wrench = self.state.wrench_target
            if wrench is None:
                wrench = p.wrench_target
            terms["wrench"] = wrench_torque(J_base, wrench)

        self.last_terms = terms
        tau = np.zeros(model.dof)
        for term in terms.values():
            tau = tau + term
        return limit_torque(tau, self.state, p.tau_limit, p.tau_rate_limit)
