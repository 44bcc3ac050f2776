"""Robot base placement by grid search over average manipulability."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import AllDiverged, AngleNearPi, DivergedTracking, InputError, ZeroDuration
from .kinematics import default_robot, fk
from .pmp import PmpGains, solve_trajectory
from .se3 import Pose, pose_compose

DIVERGED_SCORE = -np.inf


@dataclass(frozen=True)
class GridSpec:
    """Planar grid of base positions; ``nx`` by ``ny`` points including the range ends."""

    x_range: tuple = (-1.0, 1.0)
    y_range: tuple = (-1.0, 1.0)
    nx: int = 10
    ny: int = 10
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        (xl, xu), (yl, yu) = self.x_range, self.y_range
        if self.nx < 1 or self.ny < 1:
            raise InputError("grid needs at least one point per axis")
        if (self.nx > 1 and not xl < xu) or (self.ny > 1 and not yl < yu):
            raise InputError("grid ranges must satisfy lower < upper")

    def axes(self):
        xs = np.linspace(*self.x_range, self.nx) if self.nx > 1 else np.array([self.x_range[0]])
        ys = np.linspace(*self.y_range, self.ny) if self.ny > 1 else np.array([self.y_range[0]])
        return xs, ys

    def points(self):
        """(x, y) pairs, x-major then y."""
        xs, ys = self.axes()
        return [(float(x), float(y)) for x in xs for y in ys]

    def poses(self):
        return [Pose.planar(x, y, self.z, self.yaw) for x, y in self.points()]


@dataclass
class Scenario:
    base: Pose
    score: float
    status: str = "ok"
    solved: object = None

    @property
    def x(self):
        return float(self.base.pos[0])

    @property
    def y(self):
        return float(self.base.pos[1])


def scenario_fk(base, model, q):
    """End-effector pose of a robot mounted at ``base``."""
    return pose_compose(base, fk(model, q))


def trajectory_average(times, values):
    """Time average of a sampled signal by the trapezoid rule."""
    times = np.asarray(times, dtype=float)
    duration = times[-1] - times[0]
    if not duration > 0:
        raise ZeroDuration("cannot average over a zero-length time span")
    return float(np.trapezoid(values, times) / duration)


def evaluate_scenario(model, base, demo, q0, gains=None, keep_trajectory=False):
    if not len(demo) > 1 or not demo.duration > 0:
        raise ZeroDuration("demonstration has zero duration")
    try:
        traj = solve_trajectory(model, q0, demo, gains, base=base)
    except (DivergedTracking, AngleNearPi):
        return Scenario(base, DIVERGED_SCORE, "diverged")
    score = trajectory_average(traj.times, traj.manipulability)
    return Scenario(base, score, "ok", traj if keep_trajectory else None)


def average_manipulability(model, base, demo, q0, gains=None):
    """Time-averaged det(J J^T) along the joint trajectory that tracks ``demo``
    from a base at ``base``; ``-inf`` when tracking diverges."""
    return evaluate_scenario(model, base, demo, q0, gains).score


def _evaluate_packed(args):
    return evaluate_scenario(*args)


def evaluate_bases(model, demo, bases, q0, gains=None, workers=1, keep_trajectories=False):
    """Scenarios for each base pose, in input order."""
    jobs = [(model, b, demo, q0, gains, keep_trajectories) for b in bases]
    if workers <= 1 or len(jobs) <= 1:
        return [_evaluate_packed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate_packed, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def select_best(scenarios, tie_tol=0.0):
    """Highest score; ties (within ``tie_tol`` relative) go to lowest x, then lowest y."""
    scores = np.array([s.score for s in scenarios])
    if not np.any(np.isfinite(scores)):
        raise AllDiverged(
            "tracking diverged for every base position; move the grid closer to the demonstration"
        )
    top = np.max(scores)
    cut = top - tie_tol * abs(top)
    tied = [s for s in scenarios if s.score >= cut]
    return min(tied, key=lambda s: (s.x, s.y))


def grid_search(model, demo, grid=None, q0=None, gains=None, workers=1, tie_tol=0.0,
                keep_trajectories=False):
    """Evaluate every grid base position and pick the best one.

    Returns ``(best, scenarios)`` with scenarios in :meth:`GridSpec.points` order.
    """
    grid = grid or GridSpec()
    q0 = model.q_home if q0 is None else q0
    scenarios = evaluate_bases(model, demo, grid.poses(), q0, gains, workers, keep_trajectories)
    return select_best(scenarios, tie_tol), scenarios


def score_field(scenarios, grid):
    """Scores reshaped to ``(ny, nx)`` for plotting (row index is y)."""
    return np.array([s.score for s in scenarios]).reshape(grid.nx, grid.ny).T


class BasePlacementSearch(BaseEstimator):
    """Grid search for the robot base position that maximizes average manipulability.

    Parameters
    ----------
    model : RobotModel, optional
        Defaults to the bundled 7-DoF arm.
    x_range, y_range : tuple of float
        Grid limits in meters.
    nx, ny : int
        Points per axis.
    z, yaw : float
        Fixed base height and heading.
    q0 : array-like, optional
        Initial joint configuration for every scenario (defaults to ``model.q_home``).
    gains : PmpGains, optional
    n_jobs : int
        Worker processes.

    Attributes
    ----------
    best_ : Scenario
    scenarios_ : list of Scenario
    score_field_ : ndarray of shape (ny, nx)
    """

    def __init__(self, model=None, x_range=(-1.0, 1.0), y_range=(-1.0, 1.0), nx=10, ny=10,
                 z=0.0, yaw=0.0, q0=None, gains=None, n_jobs=1):
        self.model = model
        self.x_range = x_range
        self.y_range = y_range
        self.nx = nx
        self.ny = ny
        self.z = z
        self.yaw = yaw
        self.q0 = q0
        self.gains = gains
        self.n_jobs = n_jobs

    def _grid(self):
        return GridSpec(tuple(self.x_range), tuple(self.y_range), self.nx, self.ny, self.z, self.yaw)

    def fit(self, demo, y=None):
        model = self.model or default_robot()
        grid = self._grid()
        self.best_, self.scenarios_ = grid_search(
            model, demo, grid, self.q0, self.gains or PmpGains(), self.n_jobs
        )
        self.score_field_ = score_field(self.scenarios_, grid)
        self.best_base_ = self.best_.base
        return self

    def transform(self, demo):
        """Express a world-frame demonstration in the selected base frame."""
        check_is_fitted(self, "best_")
        return demo.transformed(self.best_base_.inverse())
