"""Gripper pose and aperture from labelled motion-capture markers.

Each frame is registered to a rigid marker template (least-squares rotation
via SVD), and the resulting pose sequence is smoothed by a first-order filter
on SE(3): exponential smoothing of the position and a fractional step along
the geodesic for the rotation.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    DegenerateGeometry,
    InputError,
    NoRegistrableFrames,
    TooFewMarkers,
)
from .se3 import Pose, so3_exp, so3_log
from .trajectory import DemoTrajectory

COLLINEAR_RATIO = 1e-6


@dataclass
class MarkerFrame:
    t: float
    points: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = float(self.t)
        if not np.isfinite(self.t):
            raise InputError("marker frame time must be finite")
        pts = {}
        for label, p in self.points.items():
            if p is None:
                continue
            p = np.asarray(p, dtype=float).reshape(3)
            if not np.all(np.isfinite(p)):
                raise InputError(f"marker {label!r} at t={self.t} is not finite")
            pts[label] = p
        self.points = pts


def _check_spread(points):
    """Reject point sets that are (nearly) collinear."""
    centered = points - points.mean(axis=0)
    ev = np.linalg.eigvalsh(centered.T @ centered)
    if ev[2] <= 0 or ev[1] / ev[2] <= COLLINEAR_RATIO:
        raise DegenerateGeometry("markers are collinear; the rotation is undetermined")


@dataclass
class RigidTemplate:
    """Marker positions in the gripper body frame."""

    ref_points: dict

    def __post_init__(self):
        self.ref_points = {k: np.asarray(v, dtype=float).reshape(3) for k, v in self.ref_points.items()}
        if len(self.ref_points) < 3:
            raise TooFewMarkers("a rigid template needs at least 3 markers")
        _check_spread(np.array(list(self.ref_points.values())))

    @property
    def labels(self):
        return list(self.ref_points)


def kabsch(src, dst):
    """Rotation and translation minimizing ``sum |R src_i + p - dst_i|^2``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    return rot, cd - rot @ cs


def register_rigid(template, frame):
    """Pose of the gripper body in the frame's (world) coordinates.

    Returns
    -------
    pose : Pose
    rms : float
        Root-mean-square marker residual in meters.
    """
    labels = [k for k in template.ref_points if k in frame.points]
    if len(labels) < 3:
        raise TooFewMarkers(f"only {len(labels)} template markers visible at t={frame.t}")
    src = np.array([template.ref_points[k] for k in labels])
    dst = np.array([frame.points[k] for k in labels])
    _check_spread(src)
    rot, pos = kabsch(src, dst)
    resid = dst - (src @ rot.T + pos)
    return Pose(rot, pos), float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))


def aperture(frames, label_a, label_b):
    """Distance between the two finger markers in each frame.

    Frames where either marker is missing reuse the previous value; a
    leading gap takes the first measured value. All-missing gives zeros.
    """
    out = np.full(len(frames), np.nan)
    for i, fr in enumerate(frames):
        if label_a in fr.points and label_b in fr.points:
            out[i] = np.linalg.norm(fr.points[label_a] - fr.points[label_b])
    seen = np.flatnonzero(~np.isnan(out))
    if seen.size == 0:
        return np.zeros(len(frames))
    out[: seen[0]] = out[seen[0]]
    for i in range(seen[0] + 1, len(out)):
        if np.isnan(out[i]):
            out[i] = out[i - 1]
    return out


def smooth_poses(poses, alpha):
    """First-order SE(3) smoothing; ``None`` entries hold the previous output."""
    out = []
    prev = None
    for p in poses:
        if p is None:
            out.append(prev)
            continue
        if prev is None or alpha == 1.0:
            prev = p
        else:
            rot = prev.rot @ so3_exp(alpha * so3_log(prev.rot.T @ p.rot))
            prev = Pose(rot, prev.pos + alpha * (p.pos - prev.pos))
        out.append(prev)
    return out


def filter_trajectory(frames, template, alpha=0.3, finger_labels=None):
    """Registered and smoothed gripper trajectory.

    Frames that cannot be registered (too few or degenerate markers) keep the
    previous pose and are flagged ``valid=False``; frames before the first
    registrable one take its pose.
    """
    if not 0.0 < alpha <= 1.0:
        raise InputError("alpha must lie in (0, 1]")
    if not frames:
        raise NoRegistrableFrames("no marker frames given")
    frames = sorted(frames, key=lambda f: f.t)
    raw = []
    residuals = np.full(len(frames), np.nan)
    for i, fr in enumerate(frames):
        try:
            pose, rms = register_rigid(template, fr)
        except (TooFewMarkers, DegenerateGeometry):
            raw.append(None)
            continue
        raw.append(pose)
        residuals[i] = rms
    valid = np.array([p is not None for p in raw])
    if not valid.any():
        raise NoRegistrableFrames("no frame has 3 or more non-collinear template markers")
    first = int(np.argmax(valid))
    raw[:first] = [raw[first]] * first
    poses = smooth_poses(raw, alpha)
    d = aperture(frames, *finger_labels) if finger_labels else None
    return DemoTrajectory.from_poses([f.t for f in frames], poses, d, valid, residuals)


class MarkerPoseFilter(BaseEstimator, TransformerMixin):
    """Marker frames to a smoothed gripper :class:`DemoTrajectory`.

    ``fit`` takes the rigid template (a :class:`RigidTemplate` or a
    ``{label: xyz}`` mapping); ``transform`` takes a list of
    :class:`MarkerFrame`.
    """

    def __init__(self, alpha=0.3, finger_labels=None):
        self.alpha = alpha
        self.finger_labels = finger_labels

    def fit(self, template, y=None):
        if not isinstance(template, RigidTemplate):
            template = RigidTemplate(dict(template))
        self.template_ = template
        return self

    def transform(self, frames):
        check_is_fitted(self, "template_")
        return filter_trajectory(frames, self.template_, self.alpha, self.finger_labels)
