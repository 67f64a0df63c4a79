"""Axis-aligned bounds enclosing the low-uncertainty region {x : var(x) <= tau k0}.

The data bounding box is widened by ``r_i = sqrt(C) * l_i`` on every side,
``C = -log((1 - tau) k0 / (N lam))`` with ``lam`` an extreme eigenvalue of
``(K + s_n^2 I)^-1``.  Using the largest eigenvalue gives a provable
enclosure; the smallest gives the tighter box used by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .gp import GpModel


class EigenMode(str, Enum):
    LAMBDA_MAX = "lambda_max"
    LAMBDA_MIN = "lambda_min"


@dataclass(frozen=True)
class ExpansionBounds:
    lower: np.ndarray
    upper: np.ndarray
    rate: np.ndarray
    eigen_mode: EigenMode = EigenMode.LAMBDA_MIN

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.rate < 0):
            raise ValueError("expansion rates must be non-negative")

    @classmethod
    def from_box(cls, lower, upper) -> "ExpansionBounds":
        lower = np.asarray(lower, dtype=float)
        return cls(lower, np.asarray(upper, dtype=float), np.zeros_like(lower))

    def contains(self, X, tol: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lower - tol) & (X <= self.upper + tol), axis=1)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def min_bounding_box(points):
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise ValueError("bounding box of an empty point set")
    points = np.atleast_2d(points)
    return points.min(axis=0), points.max(axis=0)


def extreme_eigenvalue(model: GpModel, eigen_mode: EigenMode | str) -> float:
    """Largest or smallest eigenvalue of (K + s_n^2 I)^-1."""
    eigen_mode = EigenMode(eigen_mode)
    try:
        eig = np.linalg.eigvalsh(model.covariance_matrix())
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigen-decomposition of the kernel matrix failed") from exc
    if eigen_mode is EigenMode.LAMBDA_MAX:
        return float(1.0 / eig[0])
    return float(1.0 / eig[-1])


def expansion_constant(k0: float, n: int, lam: float, tau: float) -> float:
    """C = -log((1 - tau) k0 / (N lam)), clamped at 0."""
    return max(0.0, -np.log((1.0 - tau) * k0 / (n * lam)))


def expansion_rate(model: GpModel, tau: float, eigen_mode: EigenMode | str = EigenMode.LAMBDA_MIN,
                   n: int = None) -> np.ndarray:
    n = model.n if n is None else n
    if n < 2:
        raise ValueError("expansion rate needs more than one evaluated point")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    lam = extreme_eigenvalue(model, eigen_mode)
    c = expansion_constant(model.k0, n, lam, tau)
    return np.full(model.dim, np.sqrt(c) * model.lengthscale)


def feasible_domain_bounds(points, model: GpModel, tau: float,
                           eigen_mode: EigenMode | str = EigenMode.LAMBDA_MIN) -> ExpansionBounds:
    lower, upper = min_bounding_box(points)
    r = expansion_rate(model, tau, eigen_mode)
    return ExpansionBounds(lower - r, upper + r, r, EigenMode(eigen_mode))
