"""Adaptive exploration coefficient.

The variance threshold ``tau * k0`` is chosen so that the best expected
improvement available on the boundary of the low-uncertainty region (where
the mean is assumed to be the prior mean) equals a floor ``EI_0`` that the
neighbourhood of the incumbent is guaranteed to beat while it still has
room for improvement.  ``xi`` (the room-for-improvement threshold) is
annealed linearly to zero so the search drifts toward exploitation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect
from scipy.stats import norm

from .acquisition import expected_improvement


@dataclass(frozen=True)
class ControlParams:
    xi0: float = 0.1
    kappa: float = 0.1
    delta: float = 0.01
    mu_m: float = 0.0
    tau_min: float = 1e-4
    tau_max: float = 0.999

    def __post_init__(self):
        if not 0.0 < self.kappa < 0.5:
            raise ValueError(f"kappa must lie in (0, 0.5), got {self.kappa}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.xi0 < 0:
            raise ValueError("xi0 must be non-negative")
        if not 0.0 < self.tau_min < self.tau_max < 1.0:
            raise ValueError("need 0 < tau_min < tau_max < 1")


@dataclass(frozen=True)
class AnnealSchedule:
    start: int
    end: int
    xi0: float

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("end must not precede start")


def anneal_xi(schedule: AnnealSchedule, t: int) -> float:
    if not schedule.start <= t <= schedule.end:
        raise ValueError(f"iteration {t} outside [{schedule.start}, {schedule.end}]")
    if schedule.end == schedule.start:
        return 0.0
    return schedule.xi0 * max(0.0, (schedule.end - t) / (schedule.end - schedule.start))


def sigma_zero(xi: float, params: ControlParams) -> float:
    """Largest std at the incumbent's neighbour for which improving by more
    than xi has probability at most kappa."""
    if xi < 0:
        raise ValueError("xi must be non-negative")
    quantile = norm.ppf(1.0 - params.kappa)
    if quantile <= 0:
        raise ValueError("kappa must be below 0.5")
    return (xi + params.delta) / quantile


def ei_floor(sigma0: float, delta: float) -> float:
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    u = -delta / sigma0
    return float(-delta * norm.cdf(u) + sigma0 * norm.pdf(u))


def boundary_ei(tau, f_prime: float, k0: float, mu_m: float = 0.0):
    """EI of a point with mean mu_m and variance tau*k0 over incumbent f'."""
    return expected_improvement(mu_m, np.sqrt(np.asarray(tau, dtype=float) * k0), f_prime)


def solve_tau(f_prime: float, k0: float, ei0: float, params: ControlParams) -> float:
    """Root of boundary_ei(tau) = ei0 in [tau_min, tau_max], clamped when absent."""
    if not np.isfinite(f_prime):
        raise ValueError("incumbent must be finite")
    if not ei0 > 0:
        raise ValueError("ei0 must be positive")

    def residual(tau):
        return boundary_ei(tau, f_prime, k0, params.mu_m) - ei0

    lo, hi = residual(params.tau_min), residual(params.tau_max)
    if lo >= 0:
        return params.tau_min
    if hi <= 0:
        return params.tau_max
    return float(bisect(residual, params.tau_min, params.tau_max, xtol=1e-14, maxiter=50))


def adaptive_tau(f_prime: float, xi: float, params: ControlParams, k0: float = 1.0) -> float:
    s0 = sigma_zero(xi, params)
    return solve_tau(f_prime, k0, ei_floor(s0, params.delta), params)
