"""Synthetic test problems, the constrained Rastrigin variant, noise and metrics.

Functions are the usual minimization forms.  Every problem checks at
construction that its listed minimizers reproduce its listed minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class BlackBox:
    """What the optimizer needs from an objective: x -> (y, feasible)."""

    evaluate: Callable
    dim: int
    known_optimum: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")

    def __call__(self, x):
        return self.evaluate(x)


@dataclass(frozen=True)
class TestProblem:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    func: Callable
    y_opt: float
    minimizers: np.ndarray
    constraint: Optional[Callable] = None
    check_tol: float = 1e-6

    __test__ = False

    def __post_init__(self):
        for xm in np.atleast_2d(self.minimizers):
            if not np.all((xm >= self.lower) & (xm <= self.upper)):
                raise ValueError(f"{self.name}: minimizer {xm} outside original bounds")
            value = self.func(xm)
            if abs(value - self.y_opt) > self.check_tol:
                raise ValueError(f"{self.name}: f(minimizer) = {value}, expected {self.y_opt}")

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name} expects a {self.dim}-vector, got shape {x.shape}")
        return float(self.func(x))

    def is_feasible(self, x) -> bool:
        return True if self.constraint is None else bool(self.constraint(np.asarray(x, dtype=float)))

    def evaluate_with_feasibility(self, x):
        return self.evaluate(x), self.is_feasible(x)

    @property
    def constrained(self) -> bool:
        return self.constraint is not None

    def as_blackbox(self, noise_std: float = 0.0, rng: Optional[np.random.Generator] = None) -> BlackBox:
        target = noisy(self, noise_std, rng) if noise_std > 0 else self
        return BlackBox(target.evaluate_with_feasibility, self.dim, self.y_opt)


@dataclass(frozen=True)
class NoisyProblem:
    """Adds N(0, sigma^2) to each evaluation; the base problem stays exact."""

    base: TestProblem
    sigma: float
    rng: np.random.Generator = field(repr=False)

    def evaluate(self, x) -> float:
        y = self.base.evaluate(x)
        return y + self.sigma * float(self.rng.standard_normal()) if self.sigma > 0 else y

    def evaluate_with_feasibility(self, x):
        return self.evaluate(x), self.base.is_feasible(x)

    def __getattr__(self, name):
        return getattr(self.base, name)


def noisy(problem: TestProblem, sigma: float, rng: Optional[np.random.Generator] = None) -> NoisyProblem:
    if sigma < 0:
        raise ValueError("noise standard deviation must be non-negative")
    return NoisyProblem(problem, float(sigma), rng if rng is not None else np.random.default_rng())


def branin(x):
    x1, x2 = x[0], x[1]
    b = 5.1 / (4 * np.pi**2)
    c = 5 / np.pi
    t = 1 / (8 * np.pi)
    return (x2 - b * x1**2 + c * x1 - 6) ** 2 + 10 * (1 - t) * np.cos(x1) + 10


def six_hump_camel(x):
    x1, x2 = x[0], x[1]
    return (4 - 2.1 * x1**2 + x1**4 / 3) * x1**2 + x1 * x2 + (-4 + 4 * x2**2) * x2**2


def beale(x):
    x1, x2 = x[0], x[1]
    return ((1.5 - x1 + x1 * x2) ** 2 + (2.25 - x1 + x1 * x2**2) ** 2
            + (2.625 - x1 + x1 * x2**3) ** 2)


def rastrigin(x):
    x = np.asarray(x, dtype=float)
    return 10 * len(x) + np.sum(x**2 - 10 * np.cos(2 * np.pi * x))


def rosenbrock(x):
    x = np.asarray(x, dtype=float)
    return np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2)


_H3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_H3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470],
                         [1091, 8732, 5547], [381, 5743, 8828]])
_H6_A = np.array([[10, 3, 17, 3.5, 1.7, 8], [0.05, 10, 17, 0.1, 8, 14],
                  [3, 3.5, 1.7, 10, 17, 8], [17, 8, 0.05, 10, 0.1, 14]])
_H6_P = 1e-4 * np.array([[1312, 1696, 5569, 124, 8283, 5886],
                         [2329, 4135, 8307, 3736, 1004, 9991],
                         [2348, 1451, 3522, 2883, 3047, 6650],
                         [4047, 8828, 8732, 5743, 1091, 381]])
_H_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def _hartmann(x, A, P):
    x = np.asarray(x, dtype=float)
    return -np.sum(_H_ALPHA * np.exp(-np.sum(A * (x - P) ** 2, axis=1)))


def hartmann3(x):
    return _hartmann(x, _H3_A, _H3_P)


def hartmann6(x):
    return _hartmann(x, _H6_A, _H6_P)


def ellipse_constraint(x) -> bool:
    """0.01 x1^2 + (x2 + 2)^2 <= 1."""
    return bool(0.01 * x[0] ** 2 + (x[1] + 2) ** 2 <= 1.0)


def constrained_rastrigin(x):
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError("constrained Rastrigin is 2-dimensional")
    return float(rastrigin(x)), ellipse_constraint(x)


def _box(lo, hi, d):
    return np.full(d, float(lo)), np.full(d, float(hi))


def _make(name: str, dim: Optional[int] = None) -> TestProblem:
    if name == "branin":
        return TestProblem("branin", 2, np.array([-5.0, 0.0]), np.array([10.0, 15.0]), branin,
                           10 / (8 * np.pi),
                           np.array([[-np.pi, 12.275], [np.pi, 2.275], [3 * np.pi, 2.475]]))
    if name == "sixhumpcamel":
        return TestProblem("sixhumpcamel", 2, np.array([-3.0, -2.0]), np.array([3.0, 2.0]),
                           six_hump_camel, -1.0316284534898774,
                           np.array([[0.08984201368301331, -0.7126564032704135],
                                     [-0.08984201368301331, 0.7126564032704135]]))
    if name == "beale":
        return TestProblem("beale", 2, *_box(-4.5, 4.5, 2), beale, 0.0, np.array([[3.0, 0.5]]))
    if name == "hartmann3":
        return TestProblem("hartmann3", 3, *_box(0, 1, 3), hartmann3, -3.8627797869493365,
                           np.array([[0.11461434, 0.55564885, 0.85254695]]))
    if name == "hartmann6":
        return TestProblem("hartmann6", 6, *_box(0, 1, 6), hartmann6, -3.3223680114155156,
                           np.array([[0.20168952, 0.15001069, 0.47687398,
                                      0.27533243, 0.31165162, 0.65730054]]))
    d = 2 if dim is None else int(dim)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if name == "rastrigin":
        return TestProblem("rastrigin", d, *_box(-5.12, 5.12, d), rastrigin, 0.0, np.zeros((1, d)))
    if name == "rosenbrock":
        if d < 2:
            raise ValueError("Rosenbrock needs dimension >= 2")
        return TestProblem("rosenbrock", d, *_box(-5, 10, d), rosenbrock, 0.0, np.ones((1, d)))
    if name == "constrained_rastrigin":
        # best feasible point: the ellipse's top vertex (0, -1)
        return TestProblem("constrained_rastrigin", 2, *_box(-5.12, 5.12, 2), rastrigin, 1.0,
                           np.array([[0.0, -1.0]]), constraint=ellipse_constraint)
    raise KeyError(f"unknown problem {name!r}; available: {', '.join(PROBLEMS)}")


PROBLEMS = ("branin", "sixhumpcamel", "beale", "hartmann3", "hartmann6",
            "rastrigin", "rosenbrock", "constrained_rastrigin")
FIXED_DIM = {"branin", "sixhumpcamel", "beale", "hartmann3", "hartmann6", "constrained_rastrigin"}


def get_problem(name: str, dim: Optional[int] = None) -> TestProblem:
    key = name.lower().replace("-", "").replace(" ", "")
    key = {"sixhump": "sixhumpcamel", "constrainedrastrigin": "constrained_rastrigin"}.get(key, key)
    if key not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(PROBLEMS)}")
    problem = _make(key, dim)
    if dim is not None and key in FIXED_DIM and dim != problem.dim:
        raise ValueError(f"{key} is {problem.dim}-dimensional, got dim={dim}")
    return problem


def evaluate_problem(name: str, x) -> float:
    x = np.asarray(x, dtype=float)
    return get_problem(name, len(x) if name in ("rastrigin", "rosenbrock") else None).evaluate(x)


def initial_window(problem: TestProblem, low: float = 0.1, high: float = 0.3):
    """Sub-box at [low, high] of the original range on every axis.

    Falls back to the mirrored window when the first one contains a minimizer.
    Returns (lower, upper, mirrored).
    """
    span = problem.upper - problem.lower
    lo = problem.lower + low * span
    hi = problem.lower + high * span
    if not _window_hits(problem, lo, hi):
        return lo, hi, False
    lo2 = problem.upper - high * span
    hi2 = problem.upper - low * span
    return lo2, hi2, True


def _window_hits(problem, lo, hi) -> bool:
    m = np.atleast_2d(problem.minimizers)
    return bool(np.any(np.all((m >= lo) & (m <= hi), axis=1)))


@dataclass(frozen=True)
class MetricSample:
    optimality_gap: float
    distance_to_center: float


def metrics(record, problem: TestProblem, center) -> MetricSample:
    """Gap of the best noise-free value among evaluated (feasible) points, and
    distance of the reported best point from ``center``."""
    X = record.points
    if len(X) == 0:
        raise ValueError("empty run record")
    values = np.array([problem.evaluate(x) for x in X])
    if problem.constrained:
        keep = np.array([problem.is_feasible(x) for x in X])
        values = np.where(keep, values, np.inf)
    gap = float(np.min(values) - problem.y_opt)
    x_star = record.x_best
    dist = float(np.linalg.norm(np.asarray(x_star) - np.asarray(center))) if x_star is not None else float("nan")
    return MetricSample(gap, dist)
