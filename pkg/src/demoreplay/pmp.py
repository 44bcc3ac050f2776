"""First-order joint trajectory generation that tracks a gripper pose demonstration.

A virtual task-space command pulls the end effector towards the demonstrated
pose; it is mapped through J^T and integrated through a first-order joint
admittance, while an optional term descends h = -det(J J^T).
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels as K
from .exceptions import AngleNearPi, DivergedTracking, InputError, NonFinite
from .se3 import Pose, orientation_error
from .trajectory import DemoTrajectory, JointTrajectory


@dataclass(frozen=True)
class PmpGains:
    """Gains of the tracking law ``qdot = gamma * (J^T Pi - lam * grad h)``.

    ``k_l`` and ``k_r`` weigh the linear and rotational errors, ``dt`` is the
    Euler step. Explicit Euler is stable while ``gamma * dt * max eig(J^T diag(k) J) < 2``.
    """

    k_l: float = 1000.0
    k_r: float = 100.0
    gamma: float = 1.0
    lam: float = 1e-3
    dt: float = 1e-3
    nullspace: bool = False
    diverge_bound: float = 0.2
    settle_time: float = 2.0
    settle_tol: float = 1e-7

    def __post_init__(self):
        for name in ("k_l", "k_r", "gamma", "dt", "diverge_bound"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.lam < 0:
            raise InputError("lam must be non-negative")
        if self.settle_time < 0 or self.settle_tol <= 0:
            raise InputError("settle_time must be >= 0 and settle_tol > 0")

    def replace(self, **kw):
        cfg = asdict(self)
        cfg.update(kw)
        return PmpGains(**cfg)


def task_command(current, target, k_l, k_r):
    """Generalized force pulling ``current`` onto ``target``.

    Both blocks are expressed in the current end-effector frame:
    ``[k_l R^T (p_G - p), k_r log(R^T R_G)]``.
    """
    if not (k_l > 0 and k_r > 0):
        raise InputError("stiffness gains must be positive")
    lin = k_l * (current.rot.T @ (target.pos - current.pos))
    ang = k_r * orientation_error(current.rot, target.rot)
    return np.concatenate([lin, ang])


def _to_base(target, base):
    return target if base is None else base.inverse() @ target


def _raise_status(status, where=""):
    if status == K.NEAR_PI:
        raise AngleNearPi(f"orientation error reached the log branch limit{where}")
    if status == K.NON_FINITE:
        raise NonFinite(f"non-finite joint update{where}")


def pmp_velocity(model, q, target, gains, base=None):
    """Joint velocity ``gamma * tau_PMP`` at ``q`` (base-frame Jacobian)."""
    q = model.check_q(q)
    tgt = _to_base(target, base)
    qdot, _, _, _, status = K.pmp_rate(
        model.a, model.alpha, model.d, model.theta_offset, q, tgt.rot, tgt.pos,
        gains.k_l, gains.k_r, gains.gamma, gains.lam, gains.nullspace,
    )
    _raise_status(status)
    return qdot


def pmp_step(model, q, target, gains, base=None):
    """One explicit Euler step of the tracking law, clamped to the joint limits.

    ``base`` is the robot base pose in the world frame that ``target`` is
    expressed in; ``None`` means the two frames coincide.
    """
    q = model.check_q(q)
    return model.clamp(q + gains.dt * pmp_velocity(model, q, target, gains, base))


def _geodesic_steps(rots):
    steps = np.zeros((max(len(rots) - 1, 0), 3))
    for i in range(len(rots) - 1):
        rel = rots[i].T @ rots[i + 1]
        r, status = K.so3_log_kernel(rel)
        if status != K.OK:
            raise AngleNearPi(f"demo rotates by ~pi between samples {i} and {i + 1}")
        steps[i] = r
    return steps


def solve_trajectory(model, q0, demo, gains=None, base=None):
    """Integrate the tracking law over a whole demonstration.

    The robot first settles on the first demonstrated pose (for at most
    ``gains.settle_time`` seconds of simulated time), then follows the
    samples, interpolating linearly in position and geodesically in rotation
    with steps of at most about ``gains.dt``. The state and tracking errors
    are recorded at every demonstration timestamp.

    Raises
    ------
    DivergedTracking
        If the linear error at a recorded sample exceeds ``gains.diverge_bound``.
    """
    gains = gains or PmpGains()
    q0 = model.check_q(q0)
    if len(demo) == 0:
        raise InputError("demonstration is empty")
    if base is None:
        rots, pos = demo.rots, demo.pos
    else:
        rots = np.einsum("ji,njk->nik", base.rot, demo.rots)
        pos = (demo.pos - base.pos) @ base.rot
    rots = np.ascontiguousarray(rots)
    pos = np.ascontiguousarray(pos)
    settle_steps = int(np.ceil(gains.settle_time / gains.dt))
    states, err_lin, err_ang, manip, status, idx = K.pmp_integrate(
        model.a, model.alpha, model.d, model.theta_offset, model.q_min, model.q_max,
        model.clamp(q0), demo.times, rots, pos, _geodesic_steps(rots),
        gains.k_l, gains.k_r, gains.gamma, gains.lam, gains.dt, gains.nullspace,
        settle_steps, gains.settle_tol, gains.diverge_bound,
    )
    if status == K.DIVERGED:
        t = float(demo.times[idx])
        raise DivergedTracking(
            f"linear tracking error {err_lin[idx]:.4g} m exceeds "
            f"{gains.diverge_bound:g} m at t={t:.4g} s",
            error=float(err_lin[idx]), time=t,
        )
    _raise_status(status, f" at sample {idx}")
    return JointTrajectory(demo.times.copy(), states, err_lin, err_ang, manipulability=manip)


def static_demo(pose, times):
    """A demonstration that holds ``pose`` at every timestamp."""
    n = len(times)
    return DemoTrajectory(times, np.repeat(pose.rot[None], n, 0), np.repeat(pose.pos[None], n, 0))

