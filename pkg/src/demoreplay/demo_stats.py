"""Gaussian mixture statistics of repeated demonstrations.

Samples from all trials are stacked as rows ``[t, p (3), r (3), d]`` where
``r`` is the rotation vector of the gripper orientation. A full-covariance
Gaussian mixture is fitted to the joint (time, space) density by EM, and
conditioning on time (Gaussian mixture regression) gives the average
trajectory together with its covariance.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DegenerateComponent, DimensionMismatch, InputError
from .se3 import so3_exp
from .trajectory import DemoTrajectory

COLUMNS = ("t", "px", "py", "pz", "rx", "ry", "rz", "d")
LOG_TINY = np.log(1e-300)


@dataclass
class DemoDataset:
    samples: np.ndarray
    trial_ids: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.trial_ids = np.asarray(self.trial_ids, dtype=int)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(COLUMNS):
            raise DimensionMismatch(f"dataset rows must have {len(COLUMNS)} columns")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("dataset contains non-finite values")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def time(self):
        return self.samples[:, :1]

    @property
    def spatial(self):
        return self.samples[:, 1:]


def build_dataset(trials):
    """Stack demonstration trials into one dataset.

    Rotation vectors are unwrapped per trial so consecutive samples stay on
    the same branch of the logarithm.
    """
    if not trials:
        raise InputError("need at least one trial")
    rows, ids = [], []
    for j, tr in enumerate(trials):
        rows.append(tr.to_array())
        ids.append(np.full(len(tr), j))
    return DemoDataset(np.vstack(rows), np.concatenate(ids))


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    columns: tuple = field(default=COLUMNS)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, d, d):
            raise DimensionMismatch("inconsistent mixture parameter shapes")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise InputError("mixture weights must be non-negative and sum to 1")
        self.columns = tuple(self.columns) if len(self.columns) == d else tuple(
            f"x{i}" for i in range(d))

    @property
    def n_components(self):
        return self.weights.size

    @property
    def n_features(self):
        return self.means.shape[1]

    def component_log_prob(self, x):
        """``log w_k + log N(x | mu_k, S_k)``, shape (N, K)."""
        return _weighted_log_prob(np.atleast_2d(x), self.weights, self.means, self.covariances)

    def log_likelihood(self, x):
        """Mean log-density of the rows of ``x``."""
        return float(np.mean(logsumexp(self.component_log_prob(x), axis=1)))

    def to_dict(self):
        return {
            "format": "demoreplay-gmm/1",
            "columns": list(self.columns),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["weights"], d["means"], d["covariances"], tuple(d.get("columns", COLUMNS)))
        except KeyError as exc:
            raise InputError(f"mixture file lacks field {exc}") from exc


def _weighted_log_prob(x, weights, means, covs, reg=0.0):
    """``log w_k + log N(x | mu_k, S_k) - (reg / 2) tr(S_k^-1)``, shape (N, K)."""
    d = x.shape[1]
    chol = np.linalg.cholesky(covs)
    inv_chol = np.linalg.inv(chol)
    # (K, d, N) whitened residuals
    y = inv_chol @ (x.T[None] - means[:, :, None])
    log_det = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    out = -0.5 * (np.sum(y * y, axis=1).T + d * np.log(2 * np.pi) + log_det)
    if reg:
        out -= 0.5 * reg * np.sum(inv_chol * inv_chol, axis=(1, 2))
    with np.errstate(divide="ignore"):
        return out + np.log(weights)


def _m_step(z, resp, reg):
    n, d = z.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = (resp.T @ z) / nk[:, None]
    diff = z.T[None] - means[:, :, None]
    covs = (diff * resp.T[:, None, :]) @ diff.transpose(0, 2, 1) / nk[:, None, None]
    covs = 0.5 * (covs + covs.transpose(0, 2, 1)) + reg * np.eye(d)
    weights = nk / nk.sum()
    return weights, means, covs


def em_fit(data, n_components=16, seed=0, reg=1e-6, tol=1e-8, max_iter=500,
           standardize=True, return_history=False):
    """Fit a full-covariance Gaussian mixture by expectation maximization.

    Parameters
    ----------
    data : DemoDataset or array of shape (N, D)
    n_components : int
    seed : int
        Seed of the k-means++ initialization.
    reg : float
        Added to every covariance diagonal in each M-step (standardized units
        when ``standardize`` is set). That M-step is the exact maximizer for
        the regularized likelihood whose component terms carry the factor
        ``exp(-(reg / 2) tr(S_k^-1))``, so the E-step weighs responsibilities
        with the same factor.
    tol : float
        Stop once the regularized mean log-likelihood gains less than this.
    standardize : bool
        Fit on per-column z-scores and map the result back.
    return_history : bool
        Also return the regularized mean log-likelihood (of the standardized
        data) at each iteration. EM never decreases it.

    Raises
    ------
    DegenerateComponent
        If a component's weight collapses below ``1 / (10 N)`` twice.
    """
    x = data.samples if isinstance(data, DemoDataset) else np.asarray(data, dtype=float)
    x = np.atleast_2d(x)
    n, d = x.shape
    if n < n_components:
        raise InputError(f"{n} samples cannot support {n_components} components")
    if not reg > 0:
        raise InputError("reg must be positive")
    if standardize:
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        center, scale = np.zeros(d), np.ones(d)
    z = (x - center) / scale

    centers, _ = kmeans_plusplus(z, n_components, random_state=seed)
    d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs = _m_step(z, resp, reg)

    floor = 1.0 / (10 * n)
    reseeded = np.zeros(n_components, dtype=bool)
    history = []
    for _ in range(max_iter):
        weights, means, covs = _reseed_collapsed(z, weights, means, covs, reg, floor, reseeded)
        log_prob = _weighted_log_prob(z, weights, means, covs, reg)
        lse = logsumexp(log_prob, axis=1)
        ll = float(np.mean(lse))
        history.append(ll)
        if len(history) > 1 and ll - history[-2] < tol:
            break
        resp = np.exp(log_prob - lse[:, None])
        weights, means, covs = _m_step(z, resp, reg)

    s = np.diag(scale)
    mixture = GaussianMixture(
        weights,
        means * scale + center,
        np.einsum("ij,kjl,lm->kim", s, covs, s),
        COLUMNS if d == len(COLUMNS) else (),
    )
    if return_history:
        return mixture, np.array(history)
    return mixture


def _reseed_collapsed(z, weights, means, covs, reg, floor, reseeded):
    low = np.flatnonzero(weights < floor)
    if low.size == 0:
        return weights, means, covs
    if np.any(reseeded[low]):
        k = int(low[reseeded[low]][0])
        raise DegenerateComponent(f"mixture component {k} collapsed again after reseeding")
    weights, means, covs = weights.copy(), means.copy(), covs.copy()
    worst = np.argsort(logsumexp(_weighted_log_prob(z, weights, means, covs), axis=1))
    global_cov = np.cov(z, rowvar=False).reshape(z.shape[1], z.shape[1]) + reg * np.eye(z.shape[1])
    for i, k in enumerate(low):
        means[k] = z[worst[i]]
        covs[k] = global_cov
        weights[k] = 1.0 / z.shape[0]
        reseeded[k] = True
    weights /= weights.sum()
    return weights, means, covs


def _condition(mixture, x, in_dims, out_dims):
    """Conditional mixture moments of ``out_dims`` given ``in_dims`` = x (rows)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    i, o = list(in_dims), list(out_dims)
    mu_i = mixture.means[:, i]
    mu_o = mixture.means[:, o]
    s_ii = mixture.covariances[:, i][:, :, i]
    s_oi = mixture.covariances[:, o][:, :, i]
    s_oo = mixture.covariances[:, o][:, :, o]
    gain = np.linalg.solve(s_ii, s_oi.transpose(0, 2, 1)).transpose(0, 2, 1)  # (K, o, i)
    cond_cov = s_oo - gain @ s_oi.transpose(0, 2, 1)

    log_h = _weighted_log_prob(x, mixture.weights, mu_i, s_ii)  # (M, K)
    lse = logsumexp(log_h, axis=1)
    h = np.exp(log_h - lse[:, None])
    extrapolated = np.max(log_h, axis=1) < LOG_TINY

    cond_mean = mu_o[None] + np.einsum("koi,mki->mko", gain, x[:, None, :] - mu_i[None])
    mean = np.einsum("mk,mko->mo", h, cond_mean)
    second = np.einsum("mk,kab->mab", h, cond_cov) + np.einsum(
        "mk,mka,mkb->mab", h, cond_mean, cond_mean)
    cov = second - np.einsum("ma,mb->mab", mean, mean)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return mean, cov, h, extrapolated


def gmr(mixture, t):
    """Mean and covariance of the spatial columns given time ``t``."""
    mean, cov, _, _ = _condition(mixture, [[t]], [0], range(1, mixture.n_features))
    return mean[0], cov[0]


def responsibilities(mixture, times):
    times = np.asarray(times, dtype=float).reshape(-1, 1)
    return _condition(mixture, times, [0], range(1, mixture.n_features))[2]


@dataclass
class RegressedTrajectory:
    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    extrapolated: np.ndarray = None

    def __len__(self):
        return self.times.size

    def to_array(self):
        return np.column_stack([self.times, self.mean])

    def to_demo(self):
        """Gripper trajectory with rotations re-exponentiated from the mean rotation vectors."""
        rots = np.array([so3_exp(r) for r in self.mean[:, 3:6]])
        return DemoTrajectory(self.times, rots, self.mean[:, :3], np.maximum(self.mean[:, 6], 0.0))


def regress_trajectory(mixture, times):
    times = np.asarray(times, dtype=float).reshape(-1)
    mean, cov, _, flag = _condition(mixture, times[:, None], [0], range(1, mixture.n_features))
    return RegressedTrajectory(times, mean, cov, flag)


class GaussianMixtureRegressor(BaseEstimator, RegressorMixin):
    """Gaussian mixture regression of ``y`` on ``X``.

    The joint density of ``[X, y]`` is fitted with :func:`em_fit`; ``predict``
    returns the conditional mean of ``y``.
    """

    def __init__(self, n_components=16, reg=1e-6, tol=1e-8, max_iter=500,
                 random_state=0, standardize=True):
        self.n_components = n_components
        self.reg = reg
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        self.mixture_, self.log_likelihood_history_ = em_fit(
            np.hstack([X, y]), self.n_components, self.random_state, self.reg,
            self.tol, self.max_iter, self.standardize, return_history=True,
        )
        self.n_iter_ = len(self.log_likelihood_history_)
        return self

    def _dims(self):
        i = range(self.n_features_in_)
        return i, range(self.n_features_in_, self.n_features_in_ + self.n_outputs_)

    def predict(self, X):
        check_is_fitted(self, "mixture_")
        X = check_array(X)
        mean, _, _, _ = _condition(self.mixture_, X, *self._dims())
        return mean

    def predict_cov(self, X):
        check_is_fitted(self, "mixture_")
        X = check_array(X)
        return _condition(self.mixture_, X, *self._dims())[1]

    def fit_trials(self, trials):
        """Fit on stacked demonstration trials (time as input)."""
        data = build_dataset(trials)
        return self.fit(data.time, data.spatial)

    def regress(self, times):
        check_is_fitted(self, "mixture_")
        return regress_trajectory(self.mixture_, times)
