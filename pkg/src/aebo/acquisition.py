"""Expected improvement, its minimum-improvement offset and feasibility weighting.

All quantities follow the maximization convention and live in the
normalized output units of :mod:`aebo.gp`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr

from . import gp as gplib

TAIL_SWITCH = -8.0
SERIES_SWITCH = 100.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_SQRT_HALF_PI = np.sqrt(0.5 * np.pi)


@dataclass(frozen=True)
class AcquisitionContext:
    """Incumbent, minimum improvement and variance threshold for one iteration.

    ``tau`` is None when no variance constraint applies (fixed-bounds EI).
    """

    incumbent: float
    epsilon: float = 0.01
    tau: Optional[float] = None
    feasibility: Optional["FeasibilityModel"] = None

    def __post_init__(self):
        if not np.isfinite(self.incumbent):
            raise ValueError("incumbent must be finite")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")

    @property
    def threshold(self) -> float:
        return self.incumbent + self.epsilon


def _log_pdf(u):
    return -0.5 * u * u - _LOG_SQRT_2PI


def log_h(u):
    """log(u * Phi(u) + phi(u)), accurate deep into the lower tail."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    direct = u >= TAIL_SWITCH
    ud = u[direct]
    out[direct] = np.log(ud * ndtr(ud) + np.exp(_log_pdf(ud)))
    t = -u[~direct]
    # 1 - t * Phi(-t) / phi(t), cancellation-free for huge t via the asymptotic series
    big = t >= SERIES_SWITCH
    tail = np.empty_like(t)
    ts = t[~big]
    tail[~big] = np.log1p(-ts * _SQRT_HALF_PI * erfcx(ts / np.sqrt(2.0)))
    tb = t[big]
    r = 1.0 / (tb * tb)
    tail[big] = np.log(r * (1 - r * (3 - r * (15 - r * (105 - r * 945)))))
    out[~direct] = _log_pdf(t) + tail
    return out


def _ei_direct(mean, std, threshold):
    u = (mean - threshold) / std
    return std * (u * ndtr(u) + np.exp(_log_pdf(u)))


def expected_improvement(mean, std, ctx: AcquisitionContext | float, epsilon: float = None):
    """EI = sigma * (u Phi(u) + phi(u)), u = (mu - (f' + eps)) / sigma.

    ``ctx`` may be an :class:`AcquisitionContext` or a bare incumbent value,
    in which case ``epsilon`` defaults to 0.  Accepts scalars or arrays.
    """
    threshold = _threshold(ctx, epsilon)
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ValueError("std must be non-negative")
    mean, std = np.broadcast_arrays(mean, std)
    out = np.array(np.maximum(mean - threshold, 0.0), dtype=float)
    pos = std > 0
    if np.any(pos):
        m, s = mean[pos] - threshold, std[pos]
        with np.errstate(over="ignore", divide="ignore"):
            u = m / s
            val = np.where(u >= TAIL_SWITCH, m * ndtr(u) + s * np.exp(_log_pdf(np.minimum(np.abs(u), 1e154))),
                           s * np.exp(log_h(np.maximum(u, -1e154))))
        out[pos] = np.maximum(val, 0.0)
    return out if out.ndim else float(out)


def log_expected_improvement(mean, std, ctx: AcquisitionContext | float, epsilon: float = None):
    """log EI for std > 0; stays finite where EI itself underflows."""
    threshold = _threshold(ctx, epsilon)
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std <= 0):
        raise ValueError("log EI needs std > 0")
    out = np.log(std) + log_h((mean - threshold) / std)
    return out if out.ndim else float(out)


def log_ei_partials(mean, std, threshold):
    """(log EI, d/dmean, d/dstd) for arrays with std > 0."""
    u = (mean - threshold) / std
    lh = log_h(u)
    d_mean = np.exp(log_ndtr(u) - lh) / std
    d_std = np.exp(_log_pdf(u) - lh) / std
    return np.log(std) + lh, d_mean, d_std


def _threshold(ctx, epsilon):
    if isinstance(ctx, AcquisitionContext):
        if epsilon is not None:
            raise TypeError("epsilon comes from the context")
        return ctx.threshold
    return float(ctx) + (0.0 if epsilon is None else float(epsilon))


def constrained_acquisition(mean, std, ctx: AcquisitionContext, p_feasible: float):
    """EI weighted by the feasibility probability; admissible iff p >= 0.5."""
    if not 0.0 <= p_feasible <= 1.0:
        raise ValueError("p_feasible must lie in [0, 1]")
    value = expected_improvement(mean, std, ctx) * p_feasible
    return value, p_feasible >= 0.5


class FeasibilityModel:
    """Probit classifier built from a GP regressed on +1/-1 labels.

    Pr(C(x)) = Phi(mu_c(x) / sqrt(var_c(x) + 1)).  Without at least one
    feasible and one infeasible label the model is degenerate and returns 1.
    """

    def __init__(self, gp: Optional[gplib.GpModel]):
        self.gp = gp

    @property
    def degenerate(self) -> bool:
        return self.gp is None

    def probability(self, X):
        X = np.atleast_2d(X)
        if self.gp is None:
            return np.ones(len(X))
        mean, var = self.gp.predict(X)
        return ndtr(mean / np.sqrt(var + 1.0))

    def log_probability_with_gradient(self, X):
        """log Pr and its input gradient, plus the latent mean (Pr >= 0.5 iff mean >= 0)."""
        X = np.atleast_2d(X)
        if self.gp is None:
            return np.zeros(len(X)), np.zeros_like(X), np.ones(len(X)), np.zeros_like(X)
        mean, var, dmean, dvar = self.gp.predict_with_gradient(X)
        s = np.sqrt(var + 1.0)
        z = mean / s
        dz = dmean / s[:, None] - (mean / (2.0 * s**3))[:, None] * dvar
        logp = log_ndtr(z)
        ratio = np.exp(_log_pdf(z) - logp)
        return logp, ratio[:, None] * dz, mean, dmean


def fit_feasibility(points, feasible, fixed_noise: float = gplib.NOISELESS_JITTER) -> FeasibilityModel:
    feasible = np.asarray(feasible, dtype=bool)
    if feasible.all() or not feasible.any():
        return FeasibilityModel(None)
    labels = np.where(feasible, 1.0, -1.0)
    return FeasibilityModel(gplib.fit(points, labels, fixed_noise, normalize=False))


def feasibility_probability(model: FeasibilityModel, x) -> float:
    return float(model.probability(np.asarray(x, dtype=float).reshape(1, -1))[0])
