"""Kinematics and rigid-body dynamics for serial-chain models.

All operations are pure functions of (model, state). Gravity defaults to the
model-level vector; pass `gravity=` to override (the zero vector is how the
Coriolis term is isolated).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .errors import DimensionMismatch, SingularTask
from .geometry import Pose
from .urdf import RobotModel

DEFAULT_DAMPING = 1e-6

# eigenvalue floor below which a task-space matrix counts as singular and the
# damped fallback is reported
_SINGULAR_EIG = 1e-8

BASE, END_EFFECTOR = "base", "end_effector"


@dataclass(frozen=True)
class Jacobian:
    """Geometric Jacobian (6 x dof, linear rows first) with its frame tag."""

    matrix: np.ndarray
    frame: str

    @property
    def linear(self):
        return self.matrix[0:3]

    @property
    def angular(self):
        return self.matrix[3:6]


def _check_vector(model, v, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != model.dof:
        raise DimensionMismatch(f"{name} has length {v.shape[0]}, expected dof={model.dof}")
    if not np.all(np.isfinite(v)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return v


def _wrench6(w):
    if w is None:
        return np.zeros(6)
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != 6:
        raise DimensionMismatch(f"wrench has length {w.shape[0]}, expected 6")
    return w


def forward_kinematics(model: RobotModel, q) -> Pose:
    """Pose of tip_link in the base frame."""
    q = _check_vector(model, q, "q")
    pos, rot = kernels.fk_frames(model.jtype, model.axes, model.origin_pos,
                                 model.origin_rot, model.dof_index, q)
    return Pose(pos[-1], rot[-1])


def frame_poses(model: RobotModel, q):
    """World pose of every link frame, base first (dof+fixed+1 entries)."""
    q = _check_vector(model, q, "q")
    pos, rot = kernels.fk_frames(model.jtype, model.axes, model.origin_pos,
                                 model.origin_rot, model.dof_index, q)
    return [Pose(p, r) for p, r in zip(pos, rot)]


def geometric_jacobian(model: RobotModel, q, frame: str = BASE) -> Jacobian:
    """Tip Jacobian in the requested frame; EE frame = blockdiag(R^T, R^T) J_base."""
    q = _check_vector(model, q, "q")
    J = kernels.geometric_jacobian_base(model.jtype, model.axes, model.origin_pos,
                                        model.origin_rot, model.dof_index, q, model.dof)
    if frame == BASE:
        return Jacobian(J, BASE)
    if frame == END_EFFECTOR:
        pos, rot = kernels.fk_frames(model.jtype, model.axes, model.origin_pos,
                                     model.origin_rot, model.dof_index, q)
        RT = rot[-1].T
        Jee = np.vstack([RT @ J[0:3], RT @ J[3:6]])
        return Jacobian(Jee, END_EFFECTOR)
    raise ValueError(f"unknown frame {frame!r}")


def rnea(model: RobotModel, q, dq, ddq, gravity=None, ext_wrench=None) -> np.ndarray:
    """Inverse dynamics: tau = M(q) ddq + C(q, dq) dq + g(q) - J^T f_ext."""
    q = _check_vector(model, q, "q")
    dq = _check_vector(model, dq, "dq")
    ddq = _check_vector(model, ddq, "ddq")
    g = model.gravity if gravity is None else np.asarray(gravity, dtype=float).reshape(3)
    return kernels.rnea(model.jtype, model.axes, model.origin_pos, model.origin_rot,
                        model.dof_index, model.masses, model.coms, model.inertias,
                        q, dq, ddq, g, _wrench6(ext_wrench))


def gravity_torque(model: RobotModel, q, gravity=None) -> np.ndarray:
    """g(q): rnea with zero velocity, zero acceleration, no external wrench."""
    zeros = np.zeros(model.dof)
    return rnea(model, q, zeros, zeros, gravity=gravity)


def coriolis_torque(model: RobotModel, q, dq) -> np.ndarray:
    """C(q, dq) dq: rnea with zero acceleration and zero gravity."""
    return rnea(model, q, dq, np.zeros(model.dof), gravity=np.zeros(3))


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Symmetric positive-definite M(q) via the composite-rigid-body algorithm."""
    q = _check_vector(model, q, "q")
    return kernels.crba(model.jtype, model.axes, model.origin_pos, model.origin_rot,
                        model.dof_index, model.masses, model.coms, model.inertias,
                        q, model.dof)


def damped_pseudoinverse(A, lam: float = DEFAULT_DAMPING) -> np.ndarray:
    """Damped least-squares pseudoinverse A^T (A A^T + lam^2 I)^-1.

    For tall matrices the transposed normal equations are used instead, so
    lam = 0 reproduces the Moore-Penrose inverse on full-rank input.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    ridge = lam * lam
    if m <= n:
        return A.T @ np.linalg.inv(A @ A.T + ridge * np.eye(m))
    return np.linalg.inv(A.T @ A + ridge * np.eye(n)) @ A.T


def _damped_spd_inverse(A, lam, what):
    """Inverse of a symmetric PSD matrix with ridge damping and a singularity report."""
    w = np.linalg.eigvalsh(A)
    if w[0] < _SINGULAR_EIG:
        warnings.warn(f"{what}: smallest eigenvalue {w[0]:.3e}, damped fallback in use",
                      SingularTask, stacklevel=3)
    return np.linalg.inv(A + lam * lam * np.eye(A.shape[0]))


def task_inertia(model: RobotModel, q, J: Jacobian, variant: str = "standard",
                 damping: float = DEFAULT_DAMPING, M=None) -> np.ndarray:
    """Task-space mass matrix.

    standard: (J M^-1 J^T)^-1, the operational-space convention.
    paper:    (Jp^T M^-1 Jp)^-1 with Jp the damped pseudoinverse of J; differs
              from standard off full rank (kept selectable for comparison).

    Pass a precomputed mass matrix M to avoid recomputing it in a control loop.
    """
    Jm = J.matrix if isinstance(J, Jacobian) else np.asarray(J, dtype=float)
    if M is None:
        M = mass_matrix(model, q)
    if variant == "standard":
        A = Jm @ cho_solve(cho_factor(M), Jm.T)
        return _damped_spd_inverse(0.5 * (A + A.T), damping, "task inertia")
    if variant == "paper":
        Jp = damped_pseudoinverse(Jm, damping)
        A = Jp.T @ cho_solve(cho_factor(M), Jp)
        return _damped_spd_inverse(0.5 * (A + A.T), damping, "task inertia (paper variant)")
    raise ValueError(f"unknown task_inertia variant {variant!r}")


def generalized_inverse(model: RobotModel, q, J: Jacobian,
                        damping: float = DEFAULT_DAMPING, M=None) -> np.ndarray:
    """Dynamically consistent inverse M^-1 J^T (J M^-1 J^T)^-1 (dof x 6)."""
    Jm = J.matrix if isinstance(J, Jacobian) else np.asarray(J, dtype=float)
    if M is None:
        M = mass_matrix(model, q)
    MinvJT = cho_solve(cho_factor(M), Jm.T)
    A = Jm @ MinvJT
    return MinvJT @ _damped_spd_inverse(0.5 * (A + A.T), damping, "generalized inverse")


def forward_dynamics(model: RobotModel, q, dq, tau, ext_wrench=None, gravity=None) -> np.ndarray:
    """Joint accelerations from torques: solves M ddq = tau + J^T f_ext - C dq - g."""
    q = _check_vector(model, q, "q")
    dq = _check_vector(model, dq, "dq")
    tau = _check_vector(model, tau, "tau")
    bias = rnea(model, q, dq, np.zeros(model.dof), gravity=gravity, ext_wrench=ext_wrench)
    M = mass_matrix(model, q)
    return cho_solve(cho_factor(M), tau - bias)
