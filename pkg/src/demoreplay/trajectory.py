"""Time-indexed containers shared across the pipeline stages."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, InputError
from .se3 import Pose, so3_exp, so3_log_near


def _check_times(times):
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise InputError("trajectory is empty")
    if not np.all(np.isfinite(times)):
        raise InputError("timestamps must be finite")
    if np.any(np.diff(times) <= 0):
        raise InputError("timestamps must be strictly increasing")
    return times


@dataclass
class DemoTrajectory:
    """Gripper pose and finger aperture over time.

    ``valid[i]`` is False where the sample could not be measured and the
    previous pose was held.
    """

    times: np.ndarray
    rots: np.ndarray
    pos: np.ndarray
    aperture: np.ndarray = None
    valid: np.ndarray = None
    residual: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.times = _check_times(self.times)
        n = self.times.size
        self.rots = np.asarray(self.rots, dtype=float).reshape(n, 3, 3)
        self.pos = np.asarray(self.pos, dtype=float).reshape(n, 3)
        if self.aperture is None:
            self.aperture = np.zeros(n)
        self.aperture = np.asarray(self.aperture, dtype=float).reshape(-1)
        if self.aperture.size != n:
            raise DimensionMismatch("aperture length differs from timestamps")
        if np.any(self.aperture < 0):
            raise InputError("aperture must be non-negative")
        if self.valid is None:
            self.valid = np.ones(n, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(n)

    def __len__(self):
        return self.times.size

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    def pose(self, i):
        return Pose(self.rots[i], self.pos[i])

    def poses(self):
        return [self.pose(i) for i in range(len(self))]

    @classmethod
    def from_poses(cls, times, poses, aperture=None, valid=None, residual=None):
        return cls(
            times,
            np.array([p.rot for p in poses]),
            np.array([p.pos for p in poses]),
            aperture,
            valid,
            residual,
        )

    def rotvecs(self):
        """Rotation vectors kept on a continuous branch from sample to sample."""
        out = np.empty((len(self), 3))
        ref = None
        for i, r in enumerate(self.rots):
            ref = so3_log_near(r, ref)
            out[i] = ref
        return out

    def to_array(self):
        """Rows ``[t, px, py, pz, rx, ry, rz, d]``."""
        return np.column_stack([self.times, self.pos, self.rotvecs(), self.aperture])

    @classmethod
    def from_array(cls, arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        if arr.shape[1] != 8:
            raise DimensionMismatch(f"expected 8 columns (t, p, r, d), got {arr.shape[1]}")
        rots = np.array([so3_exp(r) for r in arr[:, 4:7]])
        return cls(arr[:, 0], rots, arr[:, 1:4], np.maximum(arr[:, 7], 0.0))

    def transformed(self, world):
        """Left-multiply every pose by ``world``."""
        return DemoTrajectory(
            self.times.copy(),
            np.einsum("ij,njk->nik", world.rot, self.rots),
            self.pos @ world.rot.T + world.pos,
            self.aperture.copy(),
            self.valid.copy(),
        )

    def shifted(self, dt):
        return DemoTrajectory(
            self.times + dt, self.rots.copy(), self.pos.copy(),
            self.aperture.copy(), self.valid.copy(),
        )


@dataclass
class JointTrajectory:
    """Joint states with the per-sample task tracking error."""

    times: np.ndarray
    states: np.ndarray
    err_lin: np.ndarray = None
    err_ang: np.ndarray = None
    manipulability: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.times = _check_times(self.times)
        n = self.times.size
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] != n:
            raise DimensionMismatch("states must have one row per timestamp")
        self.err_lin = np.zeros(n) if self.err_lin is None else np.asarray(self.err_lin, float)
        self.err_ang = np.zeros(n) if self.err_ang is None else np.asarray(self.err_ang, float)

    def __len__(self):
        return self.times.size

    @property
    def dof(self):
        return self.states.shape[1]

    @property
    def tracking_err(self):
        return np.column_stack([self.err_lin, self.err_ang])

    def sample(self, t):
        """Linearly interpolated joint state at time(s) ``t`` (held at the ends)."""
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.times, self.states[:, i]) for i in range(self.dof)]
        return np.stack(cols, axis=-1)
