"""Compiled inner loops for the chain pass and the first-order tracking solver.

The public functions in :mod:`demoreplay.kinematics` and :mod:`demoreplay.pmp`
wrap these; everything here works on raw arrays.
"""

import numpy as np
from numba import njit

PI_BRANCH_TOL = 1e-6

OK = 0
NEAR_PI = 1
NON_FINITE = 2
DIVERGED = 3


@njit(cache=True)
def dh_chain(a, alpha, d, offset, q):
    n = q.shape[0]
    t = np.eye(4)
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    link = np.zeros((4, 4))
    tmp = np.empty((4, 4))
    link[3, 3] = 1.0
    for i in range(n):
        for r in range(3):
            axes[i, r] = t[r, 2]
            origins[i, r] = t[r, 3]
        th = q[i] + offset[i]
        ct = np.cos(th)
        st = np.sin(th)
        ca = np.cos(alpha[i])
        sa = np.sin(alpha[i])
        link[0, 0] = ct
        link[0, 1] = -st * ca
        link[0, 2] = st * sa
        link[0, 3] = a[i] * ct
        link[1, 0] = st
        link[1, 1] = ct * ca
        link[1, 2] = -ct * sa
        link[1, 3] = a[i] * st
        link[2, 0] = 0.0
        link[2, 1] = sa
        link[2, 2] = ca
        link[2, 3] = d[i]
        for r in range(4):
            for c in range(4):
                s = 0.0
                for k in range(4):
                    s += t[r, k] * link[k, c]
                tmp[r, c] = s
        t[:, :] = tmp
    return t, axes, origins


@njit(cache=True)
def _cross(u, v):
    return np.array([
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ])


@njit(cache=True)
def geometric_jacobian(t, axes, origins):
    n = axes.shape[0]
    jac = np.empty((6, n))
    pe = t[:3, 3]
    for i in range(n):
        jv = _cross(axes[i], pe - origins[i])
        for r in range(3):
            jac[r, i] = jv[r]
            jac[3 + r, i] = axes[i, r]
    return jac


@njit(cache=True)
def adjugate_psd_kernel(gram):
    # det * inverse when well conditioned (cheap), eigen-cofactors otherwise
    m = gram.shape[0]
    scale = 0.0
    for i in range(m):
        scale += gram[i, i]
    scale /= m
    det = np.linalg.det(gram)
    if scale > 0.0 and det > 1e-6 * scale ** m:
        return np.ascontiguousarray(det * np.linalg.inv(gram))
    w, v = np.linalg.eigh(gram)
    cof = np.ones(m)
    for i in range(m):
        for j in range(m):
            if j != i:
                cof[i] *= w[j]
    return np.ascontiguousarray((v * cof) @ v.T)


@njit(cache=True)
def grad_h_kernel(axes, jac):
    """-d det(J J^T)/dq via the PSD adjugate (see kinematics.grad_h)."""
    n = axes.shape[0]
    aj = adjugate_psd_kernel(jac @ jac.T) @ jac
    grad = np.zeros(n)
    for k in range(n):
        s = 0.0
        for j in range(n):
            lo = min(j, k)
            hi = max(j, k)
            ux, uy, uz = axes[lo, 0], axes[lo, 1], axes[lo, 2]
            vx, vy, vz = jac[0, hi], jac[1, hi], jac[2, hi]
            s += aj[0, j] * (uy * vz - uz * vy)
            s += aj[1, j] * (uz * vx - ux * vz)
            s += aj[2, j] * (ux * vy - uy * vx)
            if k < j:
                vx, vy, vz = axes[j, 0], axes[j, 1], axes[j, 2]
                s += aj[3, j] * (uy * vz - uz * vy)
                s += aj[4, j] * (uz * vx - ux * vz)
                s += aj[5, j] * (ux * vy - uy * vx)
        grad[k] = -2.0 * s
    return grad


@njit(cache=True)
def so3_log_kernel(m):
    """Returns (r, status); status NEAR_PI when the branch is ambiguous."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    out = np.zeros(3)
    if abs(tr + 1.0) < PI_BRANCH_TOL:
        return out, NEAR_PI
    wx = 0.5 * (m[2, 1] - m[1, 2])
    wy = 0.5 * (m[0, 2] - m[2, 0])
    wz = 0.5 * (m[1, 0] - m[0, 1])
    s = np.sqrt(wx * wx + wy * wy + wz * wz)
    c = 0.5 * (tr - 1.0)
    theta = np.arctan2(s, c)
    if theta < 1e-6:
        f = 1.0 + theta * theta / 6.0
    else:
        f = theta / s
    out[0] = wx * f
    out[1] = wy * f
    out[2] = wz * f
    return out, OK


@njit(cache=True)
def so3_exp_kernel(r):
    theta2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    if theta2 < 1e-12:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    k = np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])
    return np.eye(3) + a * k + b * (k @ k)


@njit(cache=True)
def _mat3_tn(a, b):
    # a^T b with a fixed summation order so that a^T a is exactly symmetric
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = a[0, i] * b[0, j] + a[1, i] * b[1, j] + a[2, i] * b[2, j]
    return out


@njit(cache=True)
def _manip(jac):
    g = jac @ jac.T
    return max(np.linalg.det(g), 0.0)


@njit(cache=True)
def pmp_rate(a, alpha, d, offset, q, rot_goal, pos_goal, k_l, k_r, gamma, lam, nullspace,
             with_manip=True):
    """Joint velocity of the first-order tracking law at ``q``.

    Returns (qdot, err_lin, err_ang, manipulability, status); the
    manipulability is 0 unless ``with_manip``.
    """
    t, axes, origins = dh_chain(a, alpha, d, offset, q)
    jac = geometric_jacobian(t, axes, origins)
    rot = np.ascontiguousarray(t[:3, :3])
    dp = pos_goal - t[:3, 3]
    rel = _mat3_tn(rot, rot_goal)
    rlog, status = so3_log_kernel(rel)
    n = q.shape[0]
    qdot = np.zeros(n)
    err_lin = np.sqrt(dp[0] * dp[0] + dp[1] * dp[1] + dp[2] * dp[2])
    err_ang = np.sqrt(rlog[0] * rlog[0] + rlog[1] * rlog[1] + rlog[2] * rlog[2])
    manip = _manip(jac) if with_manip else 0.0
    if status != OK:
        return qdot, err_lin, err_ang, manip, status
    # task command in the end-effector frame, then rotated to the base frame
    lin_ee = k_l * (rot.T @ dp)
    ang_ee = k_r * rlog
    wrench = np.empty(6)
    wrench[:3] = rot @ lin_ee
    wrench[3:] = rot @ ang_ee
    tau = jac.T @ wrench
    if lam != 0.0:
        g = grad_h_kernel(axes, jac)
        if nullspace:
            g = g - np.linalg.pinv(jac) @ (jac @ g)
        tau = tau - lam * g
    for i in range(n):
        qdot[i] = gamma * tau[i]
        if not np.isfinite(qdot[i]):
            return qdot, err_lin, err_ang, manip, NON_FINITE
    return qdot, err_lin, err_ang, manip, status


@njit(cache=True)
def _clamp(q, qmin, qmax):
    for i in range(q.shape[0]):
        if q[i] < qmin[i]:
            q[i] = qmin[i]
        elif q[i] > qmax[i]:
            q[i] = qmax[i]


@njit(cache=True)
def pmp_integrate(a, alpha, d, offset, qmin, qmax, q0, times, rots, pos, steps,
                  k_l, k_r, gamma, lam, dt, nullspace,
                  settle_steps, settle_tol, bound):
    """Settle on the first target, then track every later sample.

    ``steps[i]`` is the geodesic log increment from ``rots[i]`` to
    ``rots[i + 1]``. Returns (states, err_lin, err_ang, manip, status, index).
    """
    n_samples = times.shape[0]
    n = q0.shape[0]
    states = np.zeros((n_samples, n))
    err_lin = np.zeros(n_samples)
    err_ang = np.zeros(n_samples)
    manip = np.zeros(n_samples)
    q = q0.copy()

    qdot, el, ea, mu, status = pmp_rate(
        a, alpha, d, offset, q, rots[0], pos[0], k_l, k_r, gamma, lam, nullspace)
    for _ in range(settle_steps):
        if status != OK or (el < settle_tol and ea < settle_tol):
            break
        q += dt * qdot
        _clamp(q, qmin, qmax)
        qdot, el, ea, mu, status = pmp_rate(
            a, alpha, d, offset, q, rots[0], pos[0], k_l, k_r, gamma, lam, nullspace, False)
    t, axes, origins = dh_chain(a, alpha, d, offset, q)
    mu = _manip(geometric_jacobian(t, axes, origins))
    states[0] = q
    err_lin[0] = el
    err_ang[0] = ea
    manip[0] = mu
    if status != OK:
        return states, err_lin, err_ang, manip, status, 0
    if el > bound:
        return states, err_lin, err_ang, manip, DIVERGED, 0

    for i in range(n_samples - 1):
        span = times[i + 1] - times[i]
        n_sub = max(1, int(np.round(span / dt)))
        h = span / n_sub
        for s in range(1, n_sub + 1):
            frac = s / n_sub
            rg = np.ascontiguousarray(rots[i]) @ so3_exp_kernel(frac * steps[i])
            pg = pos[i] + frac * (pos[i + 1] - pos[i])
            qdot, el, ea, mu, status = pmp_rate(
                a, alpha, d, offset, q, rg, pg, k_l, k_r, gamma, lam, nullspace, False)
            if status != OK:
                return states, err_lin, err_ang, manip, status, i + 1
            q += h * qdot
            _clamp(q, qmin, qmax)
        qdot, el, ea, mu, status = pmp_rate(
            a, alpha, d, offset, q, rots[i + 1], pos[i + 1], k_l, k_r, gamma, lam, nullspace)
        states[i + 1] = q
        err_lin[i + 1] = el
        err_ang[i + 1] = ea
        manip[i + 1] = mu
        if status != OK:
            return states, err_lin, err_ang, manip, status, i + 1
        if el > bound:
            return states, err_lin, err_ang, manip, DIVERGED, i + 1
    return states, err_lin, err_ang, manip, OK, n_samples


@njit(cache=True)
def replay_integrate(cmd_times, cmd_states, delta_q, stiffness, plant_b, damping_c,
                     tau_lim, clamp, q0, t0, n_steps, dt):
    """Euler loop of the viscous joint plant driven by the impedance law.

    The damping term uses the velocity it produces, so the applied torque is
    the saturation of ``K e b / (b + c)``. Returns (times, q_cmd, q, tau,
    clamped, fault_step, fault_joint); ``fault_step`` is -1 unless a limit
    was exceeded with ``clamp`` off.
    """
    n = q0.shape[0]
    times = np.empty(n_steps + 1)
    q_cmd = np.empty((n_steps + 1, n))
    q_log = np.empty((n_steps + 1, n))
    tau_log = np.zeros((n_steps + 1, n))
    clamped = np.zeros((n_steps + 1, n), dtype=np.bool_)
    q = q0.copy()
    for k in range(n_steps + 1):
        t = t0 + k * dt
        times[k] = t
        for i in range(n):
            q_cmd[k, i] = np.interp(t, cmd_times, cmd_states[:, i])
        q_log[k] = q
        for i in range(n):
            e = q_cmd[k, i] + delta_q[i] - q[i]
            tau = stiffness[i] * e * plant_b[i] / (plant_b[i] + damping_c[i])
            if abs(tau) > tau_lim[i]:
                if not clamp:
                    tau_log[k, i] = tau
                    return times, q_cmd, q_log, tau_log, clamped, k, i
                tau = tau_lim[i] if tau > 0 else -tau_lim[i]
                clamped[k, i] = True
            tau_log[k, i] = tau
        if k < n_steps:
            for i in range(n):
                q[i] += dt * tau_log[k, i] / plant_b[i]
    return times, q_cmd, q_log, tau_log, clamped, -1, -1
