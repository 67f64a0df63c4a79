"""Gaussian process regression with an isotropic RBF kernel.

The model works in normalized output units: raw outputs are z-scored inside
:func:`fit` and every quantity returned by :class:`GpModel` (mean, variance,
gradients) is expressed on that scale.  With a unit signal variance the prior
variance far away from the data is ``k0 = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

NOISELESS_JITTER = 1e-6
NOISE_FLOOR = 1e-8
MAX_JITTER = 1e-2
N_STARTS = 8
N_REFINED = 3


class GpFitError(RuntimeError):
    """Raised when the kernel matrix cannot be factorized."""


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be non-negative, got {self.noise_variance}")

    @property
    def k0(self) -> float:
        return self.signal_variance


@dataclass
class ObservationSet:
    """Evaluated points with their raw outputs and feasibility labels."""

    points: np.ndarray
    outputs: np.ndarray
    feasible: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        self.feasible = np.asarray(self.feasible, dtype=bool).reshape(-1)
        n = len(self.points)
        if len(self.outputs) != n or len(self.feasible) != n:
            raise ValueError("points, outputs and feasible must have equal length")
        if self.points.shape[1] < 1:
            raise ValueError("points must have dimension >= 1")

    @classmethod
    def empty(cls, dim: int) -> "ObservationSet":
        return cls(np.empty((0, dim)), np.empty(0), np.empty(0, dtype=bool))

    def __len__(self) -> int:
        return len(self.outputs)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, x, y: float, feasible: bool = True) -> "ObservationSet":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.dim:
            raise ValueError(f"expected a {self.dim}-vector, got {x.shape[1]}")
        return ObservationSet(
            np.vstack([self.points, x]),
            np.append(self.outputs, float(y)),
            np.append(self.feasible, bool(feasible)),
        )


def sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rbf_kernel(a, b, lengthscale: float, signal_variance: float = 1.0) -> np.ndarray:
    """k(x, x') = s * exp(-|x - x'|^2 / (2 l^2)) for all pairs of rows."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    return signal_variance * np.exp(-0.5 * sq_distances(a, b) / lengthscale**2)


def _cholesky(matrix: np.ndarray, noise: float, k0: float):
    """Factor ``matrix + noise*I``, escalating jitter on failure.

    Returns the lower factor and the diagonal term actually used.
    """
    n = len(matrix)
    eye = np.eye(n)
    jitter = noise
    while True:
        try:
            return np.linalg.cholesky(matrix + jitter * eye), jitter
        except np.linalg.LinAlgError:
            pass
        jitter = max(jitter, 1e-10 * k0) * 10.0
        if jitter > MAX_JITTER * k0 * (1 + 1e-12):
            raise GpFitError(f"kernel matrix not positive definite with jitter {MAX_JITTER * k0:g}")


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted GP.  Immutable; safe to share between threads."""

    params: KernelParams
    train_inputs: np.ndarray
    train_targets: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0
    effective_noise: float = field(default=0.0)

    @classmethod
    def condition(cls, points, targets, params: KernelParams,
                  y_mean: float = 0.0, y_scale: float = 1.0) -> "GpModel":
        """Condition a GP with fixed hyperparameters on already-normalized targets."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        z = np.asarray(targets, dtype=float).reshape(-1)
        if len(X) != len(z):
            raise ValueError("points and targets must have equal length")
        K = rbf_kernel(X, X, params.lengthscale, params.signal_variance)
        L, used = _cholesky(K, params.noise_variance, params.k0)
        w = solve_triangular(L, z, lower=True, check_finite=False)
        alpha = solve_triangular(L.T, w, lower=False, check_finite=False)
        return cls(params, X, z, L, alpha, y_mean, y_scale, used)

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]

    @property
    def n(self) -> int:
        return len(self.train_inputs)

    @property
    def k0(self) -> float:
        return self.params.k0

    @property
    def lengthscale(self) -> float:
        return self.params.lengthscale

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        X2 = np.atleast_2d(X)
        if X2.shape[-1] != self.dim:
            raise ValueError(f"expected inputs of dimension {self.dim}, got {X2.shape[-1]}")
        return X2

    def covariance_matrix(self) -> np.ndarray:
        """K + (noise + jitter) I for the training inputs."""
        K = rbf_kernel(self.train_inputs, self.train_inputs,
                       self.params.lengthscale, self.params.signal_variance)
        return K + self.effective_noise * np.eye(self.n)

    def predict(self, X):
        """Posterior mean and variance at each row of X (normalized units)."""
        X = self._check(X)
        ks = rbf_kernel(X, self.train_inputs, self.params.lengthscale, self.params.signal_variance)
        mean = ks @ self.alpha
        v = solve_triangular(self.chol, ks.T, lower=True, check_finite=False)
        var = self.k0 - np.einsum("ij,ij->j", v, v)
        return mean, np.clip(var, 0.0, self.k0)

    def posterior(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("posterior expects a single d-vector")
        mean, var = self.predict(x[None, :])
        return float(mean[0]), float(var[0])

    def predict_with_gradient(self, X):
        """Mean, variance and their input gradients at each row of X.

        Gradients have shape (m, d).  The variance gradient is that of the
        unclamped expression.
        """
        X = self._check(X)
        ell2 = self.params.lengthscale ** 2
        ks = rbf_kernel(X, self.train_inputs, self.params.lengthscale, self.params.signal_variance)
        diff = X[:, None, :] - self.train_inputs[None, :, :]
        dk = -ks[:, :, None] * diff / ell2
        mean = ks @ self.alpha
        v = solve_triangular(self.chol, ks.T, lower=True, check_finite=False)
        var = self.k0 - np.einsum("ij,ij->j", v, v)
        a_k = solve_triangular(self.chol.T, v, lower=False, check_finite=False)
        dmean = np.einsum("mnd,n->md", dk, self.alpha)
        dvar = -2.0 * np.einsum("mnd,nm->md", dk, a_k)
        return mean, np.clip(var, 0.0, self.k0), dmean, dvar

    def posterior_gradient(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("posterior_gradient expects a single d-vector")
        _, _, dmean, dvar = self.predict_with_gradient(x[None, :])
        return dmean[0], dvar[0]

    def log_marginal_likelihood(self) -> float:
        return float(-0.5 * self.train_targets @ self.alpha
                     - np.log(np.diag(self.chol)).sum()
                     - 0.5 * self.n * np.log(2 * np.pi))

    def to_raw(self, value):
        return np.asarray(value) * self.y_scale + self.y_mean

    def to_normalized(self, value):
        return (np.asarray(value) - self.y_mean) / self.y_scale


def normalize_outputs(y):
    """Z-score outputs; a scale below 1e-12 falls back to 1."""
    y = np.asarray(y, dtype=float)
    mean = float(y.mean())
    scale = float(y.std())
    if scale < 1e-12:
        scale = 1.0
    return (y - mean) / scale, mean, scale


def _lml(D2, z, log_ell, noise, k0=1.0):
    K = k0 * np.exp(-0.5 * D2 * np.exp(-2.0 * log_ell))
    K[np.diag_indices_from(K)] += noise
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -np.inf
    w = solve_triangular(L, z, lower=True, check_finite=False)
    return float(-0.5 * w @ w - np.log(np.diag(L)).sum())


def _pattern_search(f, theta, lo, hi, step=0.5, min_step=1e-3, max_evals=200):
    """Coordinate search in log-parameter space; maximizes f inside [lo, hi]."""
    theta = np.clip(np.asarray(theta, dtype=float), lo, hi)
    best = f(theta)
    evals = 1
    while step > min_step and evals < max_evals:
        moved = False
        for i in range(len(theta)):
            for sign in (1.0, -1.0):
                trial = theta.copy()
                trial[i] = np.clip(trial[i] + sign * step, lo[i], hi[i])
                if trial[i] == theta[i]:
                    continue
                value = f(trial)
                evals += 1
                if value > best:
                    theta, best, moved = trial, value, True
                    break
        if not moved:
            step *= 0.5
    return theta, best


def fit(points, outputs, fixed_noise: Optional[float] = None, *,
        normalize: bool = True, lengthscale: Optional[float] = None) -> GpModel:
    """Fit a GP by maximizing the log marginal likelihood.

    Parameters
    ----------
    points : (N, d) array
    outputs : (N,) array of raw outputs
    fixed_noise : float, optional
        Noise variance to hold fixed.  When omitted the noise variance is
        estimated jointly with the lengthscale and floored at 1e-8.
    normalize : bool
        Z-score the outputs first.  Disable for targets that already have
        a meaningful zero (feasibility labels).
    lengthscale : float, optional
        Skip the lengthscale search and use this value.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(outputs, dtype=float).reshape(-1)
    if len(X) != len(y):
        raise ValueError("points and outputs must have equal length")
    if len(y) < 2:
        raise ValueError("fitting needs at least 2 observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("outputs must be finite")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    if normalize:
        z, y_mean, y_scale = normalize_outputs(y)
    else:
        z, y_mean, y_scale = y.copy(), 0.0, 1.0

    D2 = sq_distances(X, X)
    iu = np.triu_indices(len(X), k=1)
    pair = np.sqrt(D2[iu])
    pair = pair[pair > 0]
    scale = float(np.median(pair)) if len(pair) else 1.0

    estimate_noise = fixed_noise is None
    if lengthscale is not None and not estimate_noise:
        params = KernelParams(lengthscale, 1.0, fixed_noise)
        return GpModel.condition(X, z, params, y_mean, y_scale)

    ell_lo, ell_hi = np.log(1e-3 * scale), np.log(1e3 * scale)
    starts = np.log(scale) + np.linspace(np.log(1e-2), np.log(1e2), N_STARTS)
    if lengthscale is not None:
        ell_lo = ell_hi = np.log(lengthscale)
        starts = np.array([np.log(lengthscale)])

    if estimate_noise:
        lo = np.array([ell_lo, np.log(NOISE_FLOOR)])
        hi = np.array([ell_hi, np.log(10.0)])

        def objective(theta):
            return _lml(D2, z, theta[0], np.exp(theta[1]))

        thetas = [np.array([s, np.log(1e-2)]) for s in starts]
    else:
        lo, hi = np.array([ell_lo]), np.array([ell_hi])
        noise = float(fixed_noise)

        def objective(theta):
            return _lml(D2, z, theta[0], noise)

        thetas = [np.array([s]) for s in starts]

    # score every start, then refine the most promising ones
    scores = np.array([objective(theta) for theta in thetas])
    best_theta, best_value = thetas[0], -np.inf
    for i in np.argsort(-scores, kind="stable")[:N_REFINED]:
        theta, value = _pattern_search(objective, thetas[i], lo, hi, min_step=0.05)
        if value > best_value:
            best_theta, best_value = theta, value
    best_theta, best_value = _pattern_search(objective, best_theta, lo, hi, step=0.05)
    ell = float(np.exp(best_theta[0]))
    noise = float(np.exp(best_theta[1])) if estimate_noise else float(fixed_noise)
    return GpModel.condition(X, z, KernelParams(ell, 1.0, noise), y_mean, y_scale)
