"""Joint impedance replay on a first-order viscous plant, and wrench comparison.

Each joint follows ``qdot = tau / b`` where ``tau`` is the impedance torque
``K (q_cmd + dq - q) - c qdot`` after a torque-limit filter. The impedance
damping is ``c = 2 zeta sqrt(K)`` (unit virtual inertia) and the plant
viscosity is ``b = c``; solving the damping term against the velocity it
produces gives ``qdot = K e / (b + c)`` below the limits, a first-order lag
with time constant ``(b + c) / K``. The plant is a simulation stand-in that
exercises the command and safety path, not a dynamic model of an arm.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import (
    DimensionMismatch,
    FrameMismatch,
    InputError,
    NoOverlap,
    TorqueLimitExceeded,
    WindowOutOfRange,
)
from .trajectory import JointTrajectory, _check_times

DELTA_Q_BOUND = 0.2
POLICIES = ("clamp", "fault")
AXES = ("fx", "fy", "fz", "tx", "ty", "tz")


@dataclass(frozen=True)
class ReplayConfig:
    """Impedance replay settings.

    Parameters
    ----------
    stiffness : float or array of shape (D,)
        Joint stiffness K in N*m/rad.
    damping_ratio : float
        Scales both the impedance damping and the plant viscosity.
    delta_q : array of shape (D,), optional
        Recalibration offsets added to the commanded joints (rad).
    tau_policy : {"clamp", "fault"}
        Saturate torques at the limit, or stop with
        :class:`TorqueLimitExceeded` on the first violation.
    dt : float
        Integration step in seconds.
    """

    stiffness: object = 100.0
    damping_ratio: float = 1.0
    delta_q: object = None
    tau_policy: str = "clamp"
    dt: float = 1e-3

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.stiffness, dtype=float))
        if k.ndim != 1 or not np.all(k > 0) or not np.all(np.isfinite(k)):
            raise InputError("stiffness must be positive and finite")
        if not self.damping_ratio > 0:
            raise InputError("damping_ratio must be positive")
        if self.tau_policy not in POLICIES:
            raise InputError(f"tau_policy must be one of {POLICIES}")
        if not self.dt > 0:
            raise InputError("dt must be positive")
        if self.delta_q is not None:
            dq = np.asarray(self.delta_q, dtype=float).reshape(-1)
            if not np.all(np.abs(dq) < DELTA_Q_BOUND):
                raise InputError(f"|delta_q| entries must be below {DELTA_Q_BOUND} rad")

    def gains(self, dof):
        """Per-joint ``(K, b, c, delta_q)`` arrays for a ``dof``-joint arm."""
        k = np.atleast_1d(np.asarray(self.stiffness, dtype=float))
        if k.size == 1:
            k = np.full(dof, k[0])
        elif k.size != dof:
            raise DimensionMismatch(f"stiffness has {k.size} entries for {dof} joints")
        c = 2.0 * self.damping_ratio * np.sqrt(k)
        if self.delta_q is None:
            dq = np.zeros(dof)
        else:
            dq = np.asarray(self.delta_q, dtype=float).reshape(-1)
            if dq.size != dof:
                raise DimensionMismatch(f"delta_q has {dq.size} entries for {dof} joints")
        return k, c.copy(), c, dq

    def time_constant(self, dof=1):
        """Closed-loop lag ``(b + c) / K`` of each joint below the torque limits."""
        k, b, c, _ = self.gains(dof)
        return (b + c) / k


def impedance_torque(cfg, q_cmd, q, qdot):
    """``K ((q_cmd + dq) - q) - c qdot``."""
    q_cmd = np.asarray(q_cmd, dtype=float)
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if not q_cmd.shape == q.shape == qdot.shape or q.ndim != 1:
        raise DimensionMismatch("q_cmd, q and qdot must be vectors of equal length")
    k, _, c, dq = cfg.gains(q.size)
    return k * ((q_cmd + dq) - q) - c * qdot


def torque_limit_filter(tau, tau_lim, policy="clamp", t=None):
    """Apply the torque limits.

    Returns
    -------
    tau : ndarray
        Saturated torques (unchanged when within limits).
    clamped : list of int
        Joints that were saturated.

    Raises
    ------
    TorqueLimitExceeded
        Under the ``"fault"`` policy, naming the first offending joint.
    """
    tau = np.asarray(tau, dtype=float)
    tau_lim = np.asarray(tau_lim, dtype=float)
    if tau.shape != tau_lim.shape:
        raise DimensionMismatch("tau and tau_lim differ in length")
    if not np.all(tau_lim > 0):
        raise InputError("torque limits must be positive")
    if policy not in POLICIES:
        raise InputError(f"policy must be one of {POLICIES}")
    over = np.flatnonzero(np.abs(tau) > tau_lim)
    if over.size and policy == "fault":
        j = int(over[0])
        raise TorqueLimitExceeded(j, t, float(tau[j]), float(tau_lim[j]))
    return np.clip(tau, -tau_lim, tau_lim), [int(j) for j in over]


@dataclass
class ReplayResult:
    """Logged replay.

    ``commanded`` holds the commanded joints q_cmd (without offsets) and
    ``joint_log`` the simulated joints, both on the log grid. Clamp events
    are ``(t, joint)`` pairs over every integration step.
    """

    commanded: JointTrajectory
    joint_log: JointTrajectory
    torque: np.ndarray
    gripper: np.ndarray
    clamp_events: list = field(default_factory=list)
    success: bool = None
    score: float = None

    @property
    def times(self):
        return self.joint_log.times

    def to_array(self):
        """Rows ``[t, q_cmd (D), q (D), tau (D), d]``."""
        return np.column_stack([
            self.times, self.commanded.states, self.joint_log.states, self.torque, self.gripper
        ])


def _grid(commanded, dt):
    span = commanded.times[-1] - commanded.times[0]
    return int(np.round(span / dt))


def _replay_python(model, cfg, commanded, q0, n_steps):
    k, b, c, dq = cfg.gains(model.dof)
    n = model.dof
    t0 = commanded.times[0]
    times = t0 + cfg.dt * np.arange(n_steps + 1)
    q_cmd = commanded.sample(times)
    q_log = np.empty((n_steps + 1, n))
    tau_log = np.empty((n_steps + 1, n))
    clamped = np.zeros((n_steps + 1, n), dtype=bool)
    q = q0.copy()
    for step, t in enumerate(times):
        q_log[step] = q
        e = q_cmd[step] + dq - q
        qdot_free = k * e / (b + c)
        tau = impedance_torque(cfg, q_cmd[step], q, qdot_free)
        tau, hit = torque_limit_filter(tau, model.tau_lim, cfg.tau_policy, t)
        clamped[step, hit] = True
        tau_log[step] = tau
        q = q + cfg.dt * tau / b
    return times, q_cmd, q_log, tau_log, clamped


def simulate_replay(model, cfg, commanded, gripper_cmd=None, q0=None, log_stride=1,
                    compiled=True):
    """Replay ``commanded`` through the impedance law and torque filter.

    Parameters
    ----------
    model : RobotModel
    cfg : ReplayConfig
    commanded : JointTrajectory
        Joint targets; linearly interpolated onto the ``cfg.dt`` grid.
    gripper_cmd : array of shape (len(commanded),), optional
        Aperture command relayed alongside the joints.
    q0 : array of shape (D,), optional
        Initial joints; defaults to the offset-corrected first command, where
        the torque is zero.
    log_stride : int
        Keep every ``log_stride``-th integration step in the logs. Clamp
        events and the fault check always use every step.
    compiled : bool
        Use the compiled loop; ``False`` runs the step-by-step reference
        built on :func:`impedance_torque` and :func:`torque_limit_filter`.

    Raises
    ------
    TorqueLimitExceeded
        Under the ``"fault"`` policy.
    """
    if len(commanded) == 0:
        raise InputError("commanded trajectory is empty")
    if commanded.dof != model.dof:
        raise DimensionMismatch(f"commanded trajectory has {commanded.dof} joints, model {model.dof}")
    if log_stride < 1:
        raise InputError("log_stride must be >= 1")
    k, b, c, dq = cfg.gains(model.dof)
    q0 = commanded.states[0] + dq if q0 is None else model.check_q(q0).astype(float)
    n_steps = _grid(commanded, cfg.dt)
    if compiled:
        times, q_cmd, q_log, tau_log, clamped, fault_step, fault_joint = _kernels.replay_integrate(
            commanded.times, np.ascontiguousarray(commanded.states), dq, k, b, c,
            np.asarray(model.tau_lim, dtype=float), cfg.tau_policy == "clamp",
            np.asarray(q0, dtype=float), float(commanded.times[0]), n_steps, float(cfg.dt),
        )
        if fault_step >= 0:
            j = int(fault_joint)
            raise TorqueLimitExceeded(
                j, float(times[fault_step]), float(tau_log[fault_step, j]), float(model.tau_lim[j])
            )
    else:
        times, q_cmd, q_log, tau_log, clamped = _replay_python(model, cfg, commanded, q0, n_steps)

    steps, joints = np.nonzero(clamped)
    events = [(float(times[s]), int(j)) for s, j in zip(steps, joints)]
    if gripper_cmd is None:
        gripper = np.zeros(times.size)
    else:
        gripper_cmd = np.asarray(gripper_cmd, dtype=float).reshape(-1)
        if gripper_cmd.size != len(commanded):
            raise DimensionMismatch("gripper command length differs from the commanded trajectory")
        gripper = np.interp(times, commanded.times, gripper_cmd)
    keep = np.arange(0, times.size, log_stride)
    if keep[-1] != times.size - 1:
        keep = np.append(keep, times.size - 1)
    return ReplayResult(
        JointTrajectory(times[keep], q_cmd[keep]),
        JointTrajectory(times[keep], q_log[keep]),
        tau_log[keep],
        gripper[keep],
        events,
    )


@dataclass
class WrenchSeries:
    """Force (N) and torque (N*m) samples expressed in a named frame."""

    times: np.ndarray
    force: np.ndarray
    torque: np.ndarray
    frame: str = "R"

    def __post_init__(self):
        self.times = _check_times(self.times)
        n = self.times.size
        self.force = np.asarray(self.force, dtype=float)
        self.torque = np.asarray(self.torque, dtype=float)
        if self.force.shape != (n, 3) or self.torque.shape != (n, 3):
            raise DimensionMismatch("force and torque must be (N, 3) with one row per timestamp")
        if not self.frame:
            raise InputError("wrench series needs a frame label")

    def __len__(self):
        return self.times.size

    @property
    def wrench(self):
        return np.hstack([self.force, self.torque])

    def resample(self, times):
        w = self.wrench
        return np.column_stack([np.interp(times, self.times, w[:, i]) for i in range(6)])


@dataclass
class HapticMismatch:
    """Demonstration minus replay wrench on the overlapping demo timestamps."""

    times: np.ndarray
    diff: np.ndarray
    rms: np.ndarray
    peak: np.ndarray

    def summary(self):
        return {
            **{f"rms_{a}": float(v) for a, v in zip(AXES, self.rms)},
            **{f"peak_{a}": float(v) for a, v in zip(AXES, self.peak)},
        }


def haptic_mismatch(demo, replay):
    """Per-sample wrench difference with RMS and peak magnitude per axis.

    The replay series is linearly interpolated onto the demonstration
    timestamps that fall inside both time ranges.
    """
    if demo.frame != replay.frame:
        raise FrameMismatch(f"demo wrench is in frame {demo.frame!r}, replay in {replay.frame!r}")
    lo = max(demo.times[0], replay.times[0])
    hi = min(demo.times[-1], replay.times[-1])
    mask = (demo.times >= lo) & (demo.times <= hi)
    if not mask.any():
        raise NoOverlap("demo and replay wrench series do not overlap in time")
    t = demo.times[mask]
    diff = demo.wrench[mask] - replay.resample(t)
    return HapticMismatch(t, diff, np.sqrt(np.mean(diff ** 2, axis=0)), np.max(np.abs(diff), axis=0))


def peak_tz(wrench, window):
    """Largest ``|tau_z|`` among samples with ``window[0] <= t <= window[1]``."""
    a, b = (float(w) for w in window)
    if not (a <= b and a >= wrench.times[0] and b <= wrench.times[-1]):
        raise WindowOutOfRange(
            f"window [{a}, {b}] is not inside the series range "
            f"[{wrench.times[0]}, {wrench.times[-1]}]"
        )
    mask = (wrench.times >= a) & (wrench.times <= b)
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(wrench.torque[mask, 2])))


def classify_success(wrench, tz_threshold, window):
    """True when the twist torque about z reaches ``tz_threshold`` inside ``window``."""
    return peak_tz(wrench, window) >= tz_threshold
