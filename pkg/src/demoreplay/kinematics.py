"""Serial-chain kinematics with classic Denavit-Hartenberg rows.

Joint ``i`` (0-based) rotates about the z axis of frame ``i``; frame ``i + 1``
is frame ``i`` times ``Rz(q_i + offset_i) Tz(d_i) Tx(a_i) Rx(alpha_i)``.
All quantities are expressed in the robot base frame.
"""

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ._kernels import dh_chain
from .exceptions import DimensionMismatch, InputError, RankDeficientModel
from .se3 import Pose


@dataclass(frozen=True)
class RobotModel:
    a: np.ndarray
    alpha: np.ndarray
    d: np.ndarray
    theta_offset: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    tau_lim: np.ndarray
    q_home: np.ndarray = None
    name: str = "robot"
    _pairs: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        arrays = {}
        for key in ("a", "alpha", "d", "theta_offset", "q_min", "q_max", "tau_lim"):
            arrays[key] = np.asarray(getattr(self, key), dtype=float).reshape(-1)
        n = arrays["a"].size
        if n < 1:
            raise InputError("robot needs at least one joint")
        for key, arr in arrays.items():
            if arr.size != n:
                raise DimensionMismatch(f"{key} has {arr.size} entries, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{key} contains non-finite values")
        if np.any(arrays["q_min"] >= arrays["q_max"]):
            raise InputError("q_min must be strictly below q_max")
        if np.any(arrays["tau_lim"] <= 0):
            raise InputError("tau_lim must be positive")
        home = self.q_home
        if home is None:
            home = 0.5 * (arrays["q_min"] + arrays["q_max"])
        home = np.asarray(home, dtype=float).reshape(-1)
        if home.size != n:
            raise DimensionMismatch(f"q_home has {home.size} entries, expected {n}")
        arrays["q_home"] = home
        for key, arr in arrays.items():
            arr.flags.writeable = False
            object.__setattr__(self, key, arr)
        # (lo, hi) index grids for the Jacobian partials
        idx = np.arange(n)
        k, j = np.meshgrid(idx, idx, indexing="ij")
        object.__setattr__(self, "_pairs", (np.minimum(k, j), np.maximum(k, j), k < j))

    @property
    def dof(self):
        return self.a.size

    def check_q(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise DimensionMismatch(f"expected {self.dof} joint values, got shape {q.shape}")
        return q

    def within_limits(self, q):
        q = self.check_q(q)
        return bool(np.all(q >= self.q_min) and np.all(q <= self.q_max))

    def clamp(self, q):
        return np.clip(q, self.q_min, self.q_max)

    def to_dict(self):
        return {
            "name": self.name,
            "joints": [
                {"a": float(a), "alpha": float(al), "d": float(d), "theta_offset": float(o)}
                for a, al, d, o in zip(self.a, self.alpha, self.d, self.theta_offset)
            ],
            "q_min": self.q_min.tolist(),
            "q_max": self.q_max.tolist(),
            "tau_lim": self.tau_lim.tolist(),
            "q_home": self.q_home.tolist(),
        }

    @classmethod
    def from_dict(cls, cfg):
        try:
            joints = cfg["joints"]
            return cls(
                a=[j["a"] for j in joints],
                alpha=[j["alpha"] for j in joints],
                d=[j["d"] for j in joints],
                theta_offset=[j.get("theta_offset", 0.0) for j in joints],
                q_min=cfg["q_min"],
                q_max=cfg["q_max"],
                tau_lim=cfg["tau_lim"],
                q_home=cfg.get("q_home"),
                name=cfg.get("name", "robot"),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed robot config: missing or bad field {exc}") from exc


def load_robot(path):
    """Robot model from a JSON document (see ``data/arm7.json`` for the schema)."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"robot config not found: {path}") from None
    except ValueError as exc:
        raise InputError(f"robot config {path} is not valid JSON ({exc})") from None
    return RobotModel.from_dict(cfg)


def default_robot():
    """The bundled example 7-DoF arm."""
    text = resources.files("demoreplay.data").joinpath("arm7.json").read_text()
    return RobotModel.from_dict(json.loads(text))


def chain(model, q):
    """Forward pass over the chain.

    Returns
    -------
    t_end : (4, 4) end-effector transform
    axes : (D, 3) joint axes z_i in the base frame
    origins : (D, 3) joint frame origins in the base frame
    """
    q = model.check_q(q)
    return dh_chain(model.a, model.alpha, model.d, model.theta_offset, q)


def fk(model, q):
    return Pose.from_matrix(chain(model, q)[0])


def _jacobian_from_chain(t_end, axes, origins):
    jv = np.cross(axes, t_end[:3, 3] - origins)
    return np.vstack([jv.T, axes.T])


def jacobian(model, q):
    """Geometric Jacobian (6 x D): linear rows first, then angular rows."""
    return _jacobian_from_chain(*chain(model, q))


def _partials_from_chain(model, axes, jac):
    # d(Jv_j)/dq_k = a_lo x Jv_hi with lo/hi = min/max(j, k);
    # d(Jw_j)/dq_k = a_k x a_j for k < j, zero otherwise.
    lo, hi, strict = model._pairs
    jv = jac[:3].T
    n = model.dof
    out = np.zeros((n, 6, n))
    out[:, :3, :] = np.cross(axes[lo], jv[hi]).transpose(0, 2, 1)
    dw = np.cross(axes[lo], axes[hi]) * strict[..., None]
    out[:, 3:, :] = dw.transpose(0, 2, 1)
    return out


def jacobian_partials(model, q):
    """Exact partial derivatives of the geometric Jacobian.

    Returns an array of shape (D, 6, D) whose entry ``[k]`` is dJ/dq_k.
    """
    t_end, axes, origins = chain(model, q)
    jac = _jacobian_from_chain(t_end, axes, origins)
    return _partials_from_chain(model, axes, jac)


def _select_rows(jac, rows):
    return jac if rows is None else jac[list(rows)]


def manipulability(jac, rows=None):
    """Gram determinant det(J J^T).

    ``rows`` optionally restricts the task space (for instance ``(0, 1)`` for
    planar position); with all six rows a chain with fewer than six joints
    is rejected since the determinant is identically zero.
    """
    j = _select_rows(np.asarray(jac, dtype=float), rows)
    if j.shape[0] > j.shape[1]:
        raise RankDeficientModel(
            f"{j.shape[1]} joints cannot span {j.shape[0]} task rows; det(J J^T) == 0"
        )
    return max(float(np.linalg.det(j @ j.T)), 0.0)


def cost_h(model, q, rows=None):
    """Singularity-distance cost h = -det(J J^T)."""
    return -manipulability(jacobian(model, q), rows)


def adjugate_psd(a):
    """Adjugate of a symmetric positive semi-definite matrix.

    Computed from the eigendecomposition so it stays well defined (and
    continuous) when ``a`` is singular.
    """
    w, v = np.linalg.eigh(a)
    before = np.concatenate(([1.0], np.cumprod(w[:-1])))
    after = np.concatenate((np.cumprod(w[::-1][:-1])[::-1], [1.0]))
    return (v * (before * after)) @ v.T


def _grad_h_from_parts(jac, partials, rows):
    j = _select_rows(jac, rows)
    if j.shape[0] > j.shape[1]:
        raise RankDeficientModel(
            f"{j.shape[1]} joints cannot span {j.shape[0]} task rows; det(J J^T) == 0"
        )
    dj = partials if rows is None else partials[:, list(rows), :]
    adj = adjugate_psd(j @ j.T)
    # tr(adj (dJ J^T + J dJ^T)) = 2 tr(adj J dJ^T) for symmetric adj
    return -2.0 * np.einsum("ij,kij->k", adj @ j, dj)


def grad_h(model, q, rows=None):
    """Gradient of h = -det(J J^T) with respect to the joint angles.

    Uses d det(A) = tr(adj(A) dA) with A = J J^T, which equals the
    det(A) tr(A^-1 dA) form wherever A is invertible and vanishes smoothly
    at singular configurations.
    """
    t_end, axes, origins = chain(model, q)
    jac = _jacobian_from_chain(t_end, axes, origins)
    return _grad_h_from_parts(jac, _partials_from_chain(model, axes, jac), rows)


def kinematic_state(model, q, with_partials=False):
    """FK pose matrix, Jacobian and (optionally) its partials in one pass."""
    t_end, axes, origins = chain(model, q)
    jac = _jacobian_from_chain(t_end, axes, origins)
    partials = _partials_from_chain(model, axes, jac) if with_partials else None
    return t_end, jac, partials
