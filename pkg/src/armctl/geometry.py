"""SO(3)/SE(3) primitives and task-space pose errors.

Rotations are stored as 3x3 orthonormal matrices throughout the package;
quaternions (w, x, y, z) appear only at the wire/file boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotARotation

ROTATION_TOL = 1e-9

# Below this angle the closed-form log/exp coefficients are replaced by
# their Taylor series; above _PI_SWITCH the axis is recovered from the
# diagonal because the off-diagonal part of R vanishes at theta = pi.
_SMALL_ANGLE = 1e-7
_PI_SWITCH = np.pi - 1e-4


def check_rotation(R, tol=ROTATION_TOL):
    """Validate orthonormality and det(R) = +1; returns R as float array."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise NotARotation(f"expected 3x3 matrix, got shape {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0):
        raise NotARotation("matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > max(tol, 1e-9):
        raise NotARotation("matrix determinant is not +1")
    return R


def skew(v):
    """3-vector to skew-symmetric matrix, skew(v) @ u = v x u."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def exp_so3(omega):
    """Rodrigues' formula: axis-angle tangent vector to rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < _SMALL_ANGLE:
        # sin(t)/t and (1-cos(t))/t^2 by series to avoid 0/0
        a = 1.0 - theta**2 / 6.0 + theta**4 / 120.0
        b = 0.5 - theta**2 / 24.0 + theta**4 / 720.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R):
    """Logarithmic map: rotation matrix to tangent vector with |w| in [0, pi].

    Near theta = 0 the series expansion of theta/(2 sin theta) is used; near
    theta = pi the axis is recovered from the diagonal (largest element) with
    the sign convention that the first nonzero axis component is positive
    when the off-diagonal part gives no usable sign.
    """
    R = check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = 0.5 * np.linalg.norm(vee)
    # arccos loses precision where its argument approaches -1, so close to pi
    # the better-conditioned arcsin of the off-diagonal norm is used instead.
    if cos_theta < -0.7:
        theta = np.pi - np.arcsin(min(sin_theta, 1.0))
    else:
        theta = np.arccos(cos_theta)

    if theta < _SMALL_ANGLE:
        factor = 0.5 * (1.0 + theta**2 / 6.0 + 7.0 * theta**4 / 360.0)
        return factor * vee
    if theta < _PI_SWITCH:
        return (theta / (2.0 * np.sin(theta))) * vee

    # theta ~ pi: R + R^T = 2I + 2(1-cos)K^2 determines the axis up to sign
    one_minus_cos = 1.0 - cos_theta
    i = int(np.argmax(np.diag(R)))
    axis = np.empty(3)
    axis[i] = np.sqrt(max((R[i, i] - cos_theta) / one_minus_cos, 0.0))
    for j in range(3):
        if j != i:
            axis[j] = (R[i, j] + R[j, i]) / (2.0 * one_minus_cos * axis[i])
    axis /= np.linalg.norm(axis)
    if np.linalg.norm(vee) > 1e-9:
        if np.dot(axis, vee) < 0.0:
            axis = -axis
    else:
        # exactly pi: fix the global sign deterministically
        for a in axis:
            if abs(a) > 1e-12:
                if a < 0.0:
                    axis = -axis
                break
    return theta * axis


def rpy_to_matrix(roll, pitch, yaw):
    """URDF fixed-axis roll-pitch-yaw (x, then y, then z) to rotation matrix."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_matrix(q):
    """Unit quaternion (w, x, y, z) to rotation matrix; normalizes on ingest."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise NotARotation("zero-norm quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    """Position (m) and rotation matrix of a frame; immutable."""

    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3))

    @classmethod
    def from_quat(cls, position, quat_wxyz):
        return cls(np.asarray(position, dtype=float), quat_to_matrix(quat_wxyz))

    def quat(self):
        return matrix_to_quat(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        """This pose applied to `other` (this * other)."""
        return Pose(self.position + self.rotation @ other.position,
                    self.rotation @ other.rotation)

    def inverse(self) -> "Pose":
        RT = self.rotation.T
        return Pose(-(RT @ self.position), RT)


@dataclass(frozen=True)
class PoseError:
    """6-D tracking error: position (m) and rotation tangent vector (rad)."""

    e_pos: np.ndarray
    e_rot: np.ndarray
    frame: str  # "base" or "end_effector"

    def as_vector(self):
        return np.concatenate([self.e_pos, self.e_rot])


def pose_error(target: Pose, current: Pose, frame: str = "base") -> PoseError:
    """Tracking error between target and current pose.

    base frame:          e_pos = x_t - x_c,        e_rot = Log(R_t R_c^T)
    end-effector frame:  e_pos = R_c^T (x_t - x_c), e_rot = Log(R_c^T R_t)
    """
    dx = target.position - current.position
    if frame == "base":
        return PoseError(dx, log_so3(target.rotation @ current.rotation.T), frame)
    if frame == "end_effector":
        RcT = current.rotation.T
        return PoseError(RcT @ dx, log_so3(RcT @ target.rotation), frame)
    raise ValueError(f"unknown error frame {frame!r}")
