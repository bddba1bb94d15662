"""Array-level kinematics/dynamics kernels.

Every function here operates on the packed per-joint arrays prepared by
RobotModel (joint type codes, axes, origin frames, child-link inertials) so
that the whole set can be JIT-compiled by numba. With numba unavailable or
disabled (ARMCTL_DISABLE_JIT=1) the same code runs as plain Python.

Joint type codes: 0 revolute, 1 prismatic, 2 fixed. Link frames follow URDF
semantics: child frame = parent frame * origin * motion(q), with the joint
axis expressed in the child frame.
"""

import os

import numpy as np

try:
    if os.environ.get("ARMCTL_DISABLE_JIT", "0") == "1":
        raise ImportError
    from numba import njit

    _jit = njit(cache=True, fastmath=False)
    JIT_ENABLED = True
except ImportError:  # pragma: no cover - exercised only without numba
    def _jit(fn):
        return fn

    JIT_ENABLED = False


@_jit
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@_jit
def _mat_vec(A, b):
    out = np.empty(3)
    for r in range(3):
        out[r] = A[r, 0] * b[0] + A[r, 1] * b[1] + A[r, 2] * b[2]
    return out


@_jit
def _mat_t_vec(A, b):
    out = np.empty(3)
    for r in range(3):
        out[r] = A[0, r] * b[0] + A[1, r] * b[1] + A[2, r] * b[2]
    return out


@_jit
def _mat_mat(A, B):
    out = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            out[r, c] = A[r, 0] * B[0, c] + A[r, 1] * B[1, c] + A[r, 2] * B[2, c]
    return out


@_jit
def _rot_inertia(R, I):
    """R @ I @ R^T for 3x3 blocks."""
    tmp = _mat_mat(R, I)
    out = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            out[r, c] = tmp[r, 0] * R[c, 0] + tmp[r, 1] * R[c, 1] + tmp[r, 2] * R[c, 2]
    return out


@_jit
def _axis_rotation(axis, angle):
    """Rodrigues' formula for a unit axis."""
    c, s = np.cos(angle), np.sin(angle)
    v = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    out = np.empty((3, 3))
    out[0, 0] = c + x * x * v
    out[0, 1] = x * y * v - z * s
    out[0, 2] = x * z * v + y * s
    out[1, 0] = y * x * v + z * s
    out[1, 1] = c + y * y * v
    out[1, 2] = y * z * v - x * s
    out[2, 0] = z * x * v - y * s
    out[2, 1] = z * y * v + x * s
    out[2, 2] = c + z * z * v
    return out


@_jit
def _joint_steps(jtype, axes, origin_pos, origin_rot, dof_index, q):
    """Per-joint parent->child transforms at configuration q.

    Returns (step_rot, step_pos): rotation of child frame in parent frame and
    position of child frame origin in parent frame.
    """
    n = jtype.shape[0]
    step_rot = np.empty((n, 3, 3))
    step_pos = np.empty((n, 3))
    for i in range(n):
        if jtype[i] == 0:  # revolute
            step_rot[i] = _mat_mat(origin_rot[i], _axis_rotation(axes[i], q[dof_index[i]]))
            step_pos[i] = origin_pos[i]
        elif jtype[i] == 1:  # prismatic
            step_rot[i] = origin_rot[i]
            step_pos[i] = origin_pos[i] + _mat_vec(origin_rot[i], axes[i] * q[dof_index[i]])
        else:  # fixed
            step_rot[i] = origin_rot[i]
            step_pos[i] = origin_pos[i]
    return step_rot, step_pos


@_jit
def fk_frames(jtype, axes, origin_pos, origin_rot, dof_index, q):
    """World pose of every link frame; index 0 is the base frame."""
    n = jtype.shape[0]
    step_rot, step_pos = _joint_steps(jtype, axes, origin_pos, origin_rot, dof_index, q)
    pos = np.zeros((n + 1, 3))
    rot = np.empty((n + 1, 3, 3))
    rot[0] = np.eye(3)
    for i in range(n):
        pos[i + 1] = pos[i] + _mat_vec(rot[i], step_pos[i])
        rot[i + 1] = _mat_mat(rot[i], step_rot[i])
    return pos, rot


@_jit
def geometric_jacobian_base(jtype, axes, origin_pos, origin_rot, dof_index, q, dof):
    """Base-frame geometric Jacobian of the tip frame (6 x dof, linear on top)."""
    n = jtype.shape[0]
    pos, rot = fk_frames(jtype, axes, origin_pos, origin_rot, dof_index, q)
    tip = pos[n]
    J = np.zeros((6, dof))
    for i in range(n):
        k = dof_index[i]
        if k < 0:
            continue
        z = _mat_vec(rot[i + 1], axes[i])
        if jtype[i] == 0:  # revolute
            lin = _cross(z, tip - pos[i + 1])
            J[0:3, k] = lin
            J[3:6, k] = z
        else:  # prismatic
            J[0:3, k] = z
    return J


@_jit
def rnea(jtype, axes, origin_pos, origin_rot, dof_index, masses, coms, inertias,
         q, dq, ddq, gravity, ext_wrench):
    """Inverse dynamics: tau with M ddq + C dq + g - J^T f_ext = tau.

    ext_wrench is (force, moment) in base-frame coordinates acting at the tip
    frame origin.
    """
    n = jtype.shape[0]
    step_rot, step_pos = _joint_steps(jtype, axes, origin_pos, origin_rot, dof_index, q)

    w = np.zeros((n + 1, 3))       # angular velocity of link frame, own coords
    wd = np.zeros((n + 1, 3))      # angular acceleration
    vd = np.zeros((n + 1, 3))      # linear acceleration of frame origin
    vd[0] = -gravity               # gravity folded in via base acceleration
    body_f = np.zeros((n, 3))      # net inertial force on child link of joint i
    body_n = np.zeros((n, 3))      # net inertial moment about link com
    rot_total = np.eye(3)          # base->tip rotation, for the external wrench

    for i in range(n):
        R = step_rot[i]
        p = step_pos[i]
        rot_total = _mat_mat(rot_total, R)
        w_p = w[i]
        wd_p = wd[i]
        a_frame = vd[i] + _cross(wd_p, p) + _cross(w_p, _cross(w_p, p))
        if jtype[i] == 0:  # revolute
            k = dof_index[i]
            sdq = axes[i] * dq[k]
            w[i + 1] = _mat_t_vec(R, w_p) + sdq
            wd[i + 1] = _mat_t_vec(R, wd_p) + _cross(_mat_t_vec(R, w_p), sdq) + axes[i] * ddq[k]
            vd[i + 1] = _mat_t_vec(R, a_frame)
        elif jtype[i] == 1:  # prismatic
            k = dof_index[i]
            sdq = axes[i] * dq[k]
            w[i + 1] = _mat_t_vec(R, w_p)
            wd[i + 1] = _mat_t_vec(R, wd_p)
            vd[i + 1] = _mat_t_vec(R, a_frame) + 2.0 * _cross(w[i + 1], sdq) + axes[i] * ddq[k]
        else:  # fixed
            w[i + 1] = _mat_t_vec(R, w_p)
            wd[i + 1] = _mat_t_vec(R, wd_p)
            vd[i + 1] = _mat_t_vec(R, a_frame)
        c = coms[i]
        a_com = vd[i + 1] + _cross(wd[i + 1], c) + _cross(w[i + 1], _cross(w[i + 1], c))
        body_f[i] = masses[i] * a_com
        body_n[i] = _mat_vec(inertias[i], wd[i + 1]) \
            + _cross(w[i + 1], _mat_vec(inertias[i], w[i + 1]))

    # external wrench at the tip, rotated into tip-frame coordinates
    f_ext = _mat_t_vec(rot_total, ext_wrench[0:3])
    n_ext = _mat_t_vec(rot_total, ext_wrench[3:6])

    dof = 0
    for i in range(n):
        if dof_index[i] >= 0:
            dof += 1
    tau = np.zeros(dof)
    f = np.zeros(3)
    nm = np.zeros(3)
    for i in range(n - 1, -1, -1):
        if i == n - 1:
            f_child = -f_ext
            n_child = -n_ext
        else:
            R_next = step_rot[i + 1]
            p_next = step_pos[i + 1]
            f_down = _mat_vec(R_next, f)
            f_child = f_down
            n_child = _mat_vec(R_next, nm) + _cross(p_next, f_down)
        f = f_child + body_f[i]
        nm = n_child + body_n[i] + _cross(coms[i], body_f[i])
        k = dof_index[i]
        if k >= 0:
            if jtype[i] == 0:
                tau[k] = axes[i][0] * nm[0] + axes[i][1] * nm[1] + axes[i][2] * nm[2]
            else:
                tau[k] = axes[i][0] * f[0] + axes[i][1] * f[1] + axes[i][2] * f[2]
    return tau


@_jit
def crba(jtype, axes, origin_pos, origin_rot, dof_index, masses, coms, inertias, q, dof):
    """Joint-space mass matrix via the composite-rigid-body algorithm."""
    n = jtype.shape[0]
    step_rot, step_pos = _joint_steps(jtype, axes, origin_pos, origin_rot, dof_index, q)

    # composite body of link i+1 (child of joint i) and everything below it,
    # kept as (mass, com, inertia about com) in that link's own frame
    cm = masses.copy()
    cc = coms.copy()
    ci = inertias.copy()
    for i in range(n - 1, 0, -1):
        # fold composite of link i+1 into link i (frame index i-1 in arrays)
        R = step_rot[i]
        p = step_pos[i]
        m_child = cm[i]
        c_child = p + _mat_vec(R, cc[i])
        I_child = _rot_inertia(R, ci[i])
        m_parent = cm[i - 1]
        m_total = m_parent + m_child
        if m_total > 0.0:
            c_total = (m_parent * cc[i - 1] + m_child * c_child) / m_total
        else:
            c_total = cc[i - 1]
        I_total = np.zeros((3, 3))
        for (mk, ck, Ik) in ((m_parent, cc[i - 1], ci[i - 1]), (m_child, c_child, I_child)):
            d = ck - c_total
            d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            for r in range(3):
                for cidx in range(3):
                    shift = -d[r] * d[cidx]
                    if r == cidx:
                        shift += d2
                    I_total[r, cidx] += Ik[r, cidx] + mk * shift
        cm[i - 1] = m_total
        cc[i - 1] = c_total
        ci[i - 1] = I_total

    M = np.zeros((dof, dof))
    for i in range(n):
        di = dof_index[i]
        if di < 0:
            continue
        s = axes[i]
        m_c = cm[i]
        c_c = cc[i]
        I_c = ci[i]
        # force/moment (about the joint frame origin) from a unit joint
        # acceleration of everything at and below this joint
        if jtype[i] == 0:  # revolute
            F = m_c * _cross(s, c_c)
            N = _mat_vec(I_c, s) + _cross(c_c, F)
            M[di, di] = s[0] * N[0] + s[1] * N[1] + s[2] * N[2]
        else:  # prismatic
            F = m_c * s
            N = _cross(c_c, F)
            M[di, di] = m_c
        # walk toward the base, expressing (F, N) in each ancestor frame
        for j in range(i - 1, -1, -1):
            R = step_rot[j + 1]
            p = step_pos[j + 1]
            F = _mat_vec(R, F)
            N = _mat_vec(R, N) + _cross(p, F)
            dj = dof_index[j]
            if dj < 0:
                continue
            sj = axes[j]
            if jtype[j] == 0:
                M[dj, di] = sj[0] * N[0] + sj[1] * N[1] + sj[2] * N[2]
            else:
                M[dj, di] = sj[0] * F[0] + sj[1] * F[1] + sj[2] * F[2]
            M[di, dj] = M[dj, di]
    return M
