"""Synthetic demonstrations with known ground truth.

Pose trajectories are built from timed waypoints (minimum-jerk position,
geodesic rotation, linear aperture); marker clouds are the inverse of the
marker registration step; wrench series are smooth fixtures for the haptic
comparison.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError
from .kinematics import default_robot, fk
from .markers import MarkerFrame, RigidTemplate
from .replay import WrenchSeries
from .se3 import Pose, geodesic_interp, rot_z, so3_exp
from .trajectory import DemoTrajectory

FINGER_LABELS = ("f1", "f2")
FINGER_BASE = np.array([0.0, 0.0, 0.1])


@dataclass
class SynthSpec:
    """Waypoints ``(t, Pose, aperture)`` and the noise and sampling settings.

    ``noise_sigma_pos`` is white noise on every sampled position (m) and
    ``noise_sigma_marker`` on every marker (m). Paced trials additionally
    move each waypoint by ``trial_sigma_pos`` (m), ``trial_sigma_rot`` (rad)
    and ``trial_sigma_aperture`` (m), and shift interior waypoint times by
    ``trial_jitter`` (s), so trials differ smoothly as repeated human
    demonstrations do.
    """

    waypoints: list
    noise_sigma_pos: float = 0.0
    noise_sigma_marker: float = 0.0
    rate: float = 100.0
    n_trials: int = 1
    trial_jitter: float = 0.0
    seed: int = 0
    dropout: float = 0.0
    finger_markers: bool = True
    trial_sigma_pos: float = 0.0
    trial_sigma_rot: float = 0.0
    trial_sigma_aperture: float = 0.0

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise InputError("need at least 2 waypoints")
        t = np.array([w[0] for w in self.waypoints], dtype=float)
        if np.any(np.diff(t) <= 0):
            raise InputError("waypoint times must be strictly increasing")
        if min(self.noise_sigma_pos, self.noise_sigma_marker, self.trial_jitter,
               self.trial_sigma_pos, self.trial_sigma_rot, self.trial_sigma_aperture) < 0:
            raise InputError("noise levels must be non-negative")
        if not self.rate > 0:
            raise InputError("rate must be positive")
        if self.n_trials < 1:
            raise InputError("n_trials must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError("dropout must lie in [0, 1)")

    @property
    def times(self):
        t0, t1 = self.waypoints[0][0], self.waypoints[-1][0]
        n = int(np.round((t1 - t0) * self.rate)) + 1
        return np.linspace(t0, t1, n)

    def trial_rngs(self):
        return [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(self.n_trials)]


def min_jerk(s):
    """Quintic profile ``10 s^3 - 15 s^4 + 6 s^5`` with zero end velocity and acceleration."""
    s = np.asarray(s, dtype=float)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _interpolate(waypoints, times):
    wt = np.array([w[0] for w in waypoints], dtype=float)
    seg = np.clip(np.searchsorted(wt, times, side="right") - 1, 0, len(wt) - 2)
    rots = np.empty((times.size, 3, 3))
    pos = np.empty((times.size, 3))
    ap = np.empty(times.size)
    for i, (t, k) in enumerate(zip(times, seg)):
        (ta, pa, da), (tb, pb, db) = waypoints[k], waypoints[k + 1]
        u = (t - ta) / (tb - ta)
        s = min_jerk(u)
        if u == 1.0:
            pos[i], rots[i], ap[i] = pb.pos, pb.rot, db
            continue
        pos[i] = pa.pos + s * (pb.pos - pa.pos)
        rots[i] = geodesic_interp(pa.rot, pb.rot, s)
        ap[i] = da + u * (db - da)
    return rots, pos, ap


def gen_pose_trajectory(spec, rng=None, waypoints=None):
    """Sample the waypoint interpolant at ``spec.rate`` with position noise."""
    waypoints = spec.waypoints if waypoints is None else waypoints
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    times = spec.times
    rots, pos, ap = _interpolate(waypoints, times)
    if spec.noise_sigma_pos > 0:
        pos = pos + rng.normal(0.0, spec.noise_sigma_pos, pos.shape)
    return DemoTrajectory(times, rots, pos, np.maximum(ap, 0.0))


def _perturb_waypoints(spec, rng):
    wps = list(spec.waypoints)
    t = np.array([w[0] for w in wps], dtype=float)
    moved = t.copy()
    if spec.trial_jitter > 0:
        for k in range(1, len(t) - 1):
            gap = 0.45 * min(t[k] - t[k - 1], t[k + 1] - t[k])
            moved[k] = t[k] + np.clip(rng.normal(0.0, spec.trial_jitter), -gap, gap)
    out = []
    for m, (_, pose, d) in zip(moved, wps):
        dp = rng.normal(0.0, spec.trial_sigma_pos, 3) if spec.trial_sigma_pos > 0 else 0.0
        rot = pose.rot
        if spec.trial_sigma_rot > 0:
            rot = rot @ so3_exp(rng.normal(0.0, spec.trial_sigma_rot, 3))
        if spec.trial_sigma_aperture > 0:
            d = max(0.0, d + rng.normal(0.0, spec.trial_sigma_aperture))
        out.append((float(m), Pose(rot, pose.pos + dp), d))
    return out


def gen_paced_trials(spec):
    """``spec.n_trials`` perturbed repetitions of the waypoint motion.

    Every trial keeps the first and last waypoint times, so all trials share
    the same duration and sample grid.
    """
    out = []
    for rng in spec.trial_rngs():
        out.append(gen_pose_trajectory(spec, rng, _perturb_waypoints(spec, rng)))
    return out


def default_template():
    """Four non-coplanar markers on the gripper body (meters)."""
    return RigidTemplate({
        "m1": [0.06, 0.0, 0.0],
        "m2": [-0.03, 0.05, 0.0],
        "m3": [-0.03, -0.05, 0.01],
        "m4": [0.0, 0.0, 0.07],
    })


def finger_points(aperture):
    """Body-frame finger markers separated by ``aperture`` along y."""
    half = 0.5 * aperture
    return FINGER_BASE + np.array([0.0, half, 0.0]), FINGER_BASE - np.array([0.0, half, 0.0])


def gen_marker_frames(traj, template, sigma=0.0, dropout=0.0, rng=None, finger_markers=True):
    """Marker frames seen by a tracker following ``traj``.

    Each marker gets isotropic Gaussian noise of ``sigma`` meters and is
    dropped independently with probability ``dropout``.
    """
    if sigma < 0 or not 0.0 <= dropout < 1.0:
        raise InputError("sigma must be >= 0 and dropout in [0, 1)")
    rng = np.random.default_rng(0) if rng is None else rng
    labels = template.labels
    ref = np.array([template.ref_points[k] for k in labels])
    frames = []
    for i in range(len(traj)):
        pose = traj.pose(i)
        pts = dict(zip(labels, pose.apply(ref)))
        if finger_markers:
            fa, fb = finger_points(traj.aperture[i])
            pts[FINGER_LABELS[0]] = pose.apply(fa)
            pts[FINGER_LABELS[1]] = pose.apply(fb)
        names = list(pts)
        noise = rng.normal(0.0, sigma, (len(names), 3)) if sigma > 0 else np.zeros((len(names), 3))
        keep = rng.random(len(names)) >= dropout if dropout > 0 else np.ones(len(names), bool)
        frames.append(MarkerFrame(traj.times[i], {
            k: pts[k] + noise[j] for j, k in enumerate(names) if keep[j]
        }))
    return frames


def demo_waypoints(model=None, base=None, duration=25.0, q=None):
    """A reach, descend, twist and retreat task reachable from ``base``.

    The motion is centred on the end-effector pose at ``q`` (default the
    model's home configuration) of a robot mounted at ``base``; the gripper
    closes while it is down.
    """
    model = model or default_robot()
    base = Pose.planar(0.0, 0.0) if base is None else base
    q = model.q_home if q is None else q
    home = base @ fk(model, q)
    down = np.array([0.0, 0.0, -0.06])
    twist = rot_z(0.35)

    def at(dp, r=np.eye(3)):
        return Pose(r @ home.rot, home.pos + dp)

    frac = np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]) * duration
    return [
        (frac[0], at(np.array([-0.05, 0.04, 0.03])), 0.08),
        (frac[1], at(np.zeros(3)), 0.08),
        (frac[2], at(down), 0.08),
        (frac[3], at(down), 0.02),
        (frac[4], at(down, twist), 0.02),
        (frac[5], at(np.array([0.0, 0.0, 0.02]), twist), 0.02),
    ]


def _bump(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def gen_wrench_series(times, tz_peak=1.5, t_twist=None, push=8.0, noise=0.0, rng=None,
                      frame="R"):
    """Insertion-like wrench fixture: a downward push and a twist torque pulse."""
    times = np.asarray(times, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    t0, t1 = times[0], times[-1]
    span = t1 - t0
    t_twist = t0 + 0.7 * span if t_twist is None else t_twist
    force = np.zeros((times.size, 3))
    torque = np.zeros((times.size, 3))
    force[:, 2] = -push * _bump(times, t0 + 0.5 * span, 0.08 * span)
    force[:, 0] = 0.1 * push * _bump(times, t0 + 0.45 * span, 0.05 * span)
    torque[:, 2] = tz_peak * _bump(times, t_twist, 0.04 * span)
    torque[:, 0] = 0.05 * push * _bump(times, t0 + 0.5 * span, 0.08 * span)
    if noise > 0:
        force += rng.normal(0.0, noise, force.shape)
        torque += rng.normal(0.0, 0.1 * noise, torque.shape)
    return WrenchSeries(times, force, torque, frame)


def gen_replay_wrenches(demo, n, seed=0, spread=0.5, noise=0.05):
    """``n`` replay fixtures around ``demo`` with a random twist-torque gain.

    The twist pulse of replay ``i`` is scaled by a factor drawn uniformly
    from ``[1 - spread, 1 + spread / 2]``, which makes some replays fall below
    a success threshold placed near the demonstrated peak.
    """
    out = []
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)):
        gain = rng.uniform(1.0 - spread, 1.0 + 0.5 * spread)
        shift = rng.normal(0.0, 0.01 * (demo.times[-1] - demo.times[0]))
        t = demo.times
        force = np.column_stack([np.interp(t - shift, t, demo.force[:, i]) for i in range(3)])
        torque = np.column_stack([np.interp(t - shift, t, demo.torque[:, i]) for i in range(3)])
        torque[:, 2] *= gain
        force = force + rng.normal(0.0, noise, force.shape)
        torque = torque + rng.normal(0.0, 0.1 * noise, torque.shape)
        out.append(WrenchSeries(t.copy(), force, torque, demo.frame))
    return out


@dataclass
class SynthBundle:
    """Everything a pipeline run needs, with the ground truth it came from."""

    spec: SynthSpec
    trials: list
    frames: list
    template: RigidTemplate
    demo_wrench: WrenchSeries
    replay_wrenches: list = field(default_factory=list)


def gen_bundle(spec, template=None, n_replays=30, wrench_rate=100.0):
    """Paced trials, their marker frames and the wrench fixtures."""
    template = template or default_template()
    trials = gen_paced_trials(spec)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([spec.seed, 1]).spawn(len(trials))]
    frames = [
        gen_marker_frames(tr, template, spec.noise_sigma_marker, spec.dropout, rng, spec.finger_markers)
        for tr, rng in zip(trials, rngs)
    ]
    t0, t1 = spec.waypoints[0][0], spec.waypoints[-1][0]
    wt = np.linspace(t0, t1, int(np.round((t1 - t0) * wrench_rate)) + 1)
    demo_wrench = gen_wrench_series(wt, rng=np.random.default_rng([spec.seed, 2]), noise=0.05)
    replays = gen_replay_wrenches(demo_wrench, n_replays, seed=spec.seed + 3) if n_replays else []
    return SynthBundle(spec, trials, frames, template, demo_wrench, replays)
