"""The adaptive expansion loop, its constrained variant and a fixed-bounds EI baseline.

Internally everything is a maximization: with ``sense="minimize"`` outputs
are negated on the way in and back on the way out, so the history and the
reported best are always in the black box's own units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from . import gp as gplib
from .acquisition import AcquisitionContext, fit_feasibility
from .adaptive_control import AnnealSchedule, ControlParams, adaptive_tau, anneal_xi
from .benchmarks import BlackBox
from .expansion import EigenMode, ExpansionBounds, feasible_domain_bounds
from .inner_search import SearchConfig, propose

log = logging.getLogger(__name__)


class Mode(str, Enum):
    AEBO = "aebo"
    AEBO_CONSTRAINED = "aebo_constrained"
    FIXED_BOUNDS_EI = "fixed_bounds_ei"


class EvaluationError(RuntimeError):
    """A black-box evaluation failed or produced an unusable result."""


@dataclass(frozen=True)
class OptimizerConfig:
    lower: np.ndarray
    upper: np.ndarray
    n_init: Optional[int] = None
    budget: Optional[int] = None
    control: ControlParams = field(default_factory=ControlParams)
    epsilon: float = 0.01
    search: SearchConfig = field(default_factory=SearchConfig)
    mode: Mode = Mode.AEBO
    sense: str = "minimize"
    seed: int = 0
    noisy: bool = False
    eigen_mode: EigenMode = EigenMode.LAMBDA_MIN

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "eigen_mode", EigenMode(self.eigen_mode))
        d = len(lower)
        if d < 1 or lower.shape != upper.shape:
            raise ValueError("bounds must be matching non-empty vectors")
        if not np.all(upper > lower):
            raise ValueError("initial bounds are degenerate")
        if self.n_init is None:
            object.__setattr__(self, "n_init", 5 * d)
        if self.budget is None:
            object.__setattr__(self, "budget", 50 * d)
        if self.n_init < 2:
            raise ValueError("n_init must be at least 2")
        if self.budget < self.n_init:
            raise ValueError("budget must not be smaller than n_init")
        if self.sense not in ("minimize", "maximize"):
            raise ValueError("sense must be 'minimize' or 'maximize'")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sign(self) -> float:
        return 1.0 if self.sense == "maximize" else -1.0

    def with_(self, **changes) -> "OptimizerConfig":
        return replace(self, **changes)


@dataclass
class HistoryRow:
    iteration: int
    x: np.ndarray
    y: float
    feasible: bool
    best: float
    tau: float
    xi: float
    box_lower: np.ndarray
    box_upper: np.ndarray
    fallback: bool = False


@dataclass
class RunRecord:
    rows: List[HistoryRow]
    sense: str = "minimize"
    x_best: Optional[np.ndarray] = None
    f_best: float = float("nan")
    failed: bool = False
    error: Optional[str] = None

    @property
    def points(self) -> np.ndarray:
        if not self.rows:
            return np.empty((0, 0))
        return np.array([r.x for r in self.rows])

    @property
    def outputs(self) -> np.ndarray:
        return np.array([r.y for r in self.rows])

    @property
    def best_trace(self) -> np.ndarray:
        return np.array([r.best for r in self.rows])

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.rows])

    def __len__(self) -> int:
        return len(self.rows)


def lhs_sample(lower, upper, n: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube: one uniform draw per equal-width stratum, strata shuffled per axis."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if n < 1:
        raise ValueError("n must be at least 1")
    if not np.all(upper > lower):
        raise ValueError("LHS bounds are degenerate")
    d = len(lower)
    u = (np.arange(n)[:, None] + rng.random((n, d))) / n
    for j in range(d):
        u[:, j] = u[rng.permutation(n), j]
    return lower + u * (upper - lower)


class _State:
    """Observations and incumbent bookkeeping for a single run."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.data = gplib.ObservationSet.empty(cfg.dim)
        self.rows: List[HistoryRow] = []
        self.best_idx: Optional[int] = None

    def add(self, x, y, feasible, tau, xi, box, fallback):
        self.data = self.data.append(x, y, feasible)
        i = len(self.data) - 1
        counts = feasible if self.cfg.mode is Mode.AEBO_CONSTRAINED else True
        if counts and np.isfinite(y):
            s = self.cfg.sign
            if self.best_idx is None or s * y > s * self.data.outputs[self.best_idx]:
                self.best_idx = i
        best = float(self.data.outputs[self.best_idx]) if self.best_idx is not None else float("nan")
        self.rows.append(HistoryRow(i + 1, np.array(x, dtype=float), float(y), bool(feasible), best,
                                    float(tau), float(xi), np.array(box[0], dtype=float),
                                    np.array(box[1], dtype=float), bool(fallback)))

    def record(self, failed=False, error=None) -> RunRecord:
        rec = RunRecord(self.rows, self.cfg.sense, failed=failed, error=error)
        if self.best_idx is not None:
            rec.x_best = self.data.points[self.best_idx].copy()
            rec.f_best = float(self.data.outputs[self.best_idx])
        return rec


def _evaluate(blackbox, x, cfg: OptimizerConfig, iteration: int):
    try:
        out = blackbox(x)
    except EvaluationError as exc:
        raise EvaluationError(f"iteration {iteration}: {exc}") from exc
    if isinstance(out, tuple):
        y, feasible = out
    else:
        y, feasible = out, True
    y = float("nan") if y is None else float(y)
    feasible = bool(feasible)
    if not np.isfinite(y):
        if cfg.mode is Mode.AEBO_CONSTRAINED:
            feasible = False
        else:
            raise EvaluationError(f"iteration {iteration}: non-finite objective value {y}")
    return y, feasible


def step(state: _State, t: int, rng: np.random.Generator):
    """Compute the next proposal; returns (x, tau, xi, bounds, fallback)."""
    cfg = state.cfg
    data = state.data
    finite = np.isfinite(data.outputs)
    internal = cfg.sign * data.outputs[finite]
    noise = None if cfg.noisy else gplib.NOISELESS_JITTER
    model = gplib.fit(data.points[finite], internal, noise)
    z = model.to_normalized(internal)

    if cfg.mode is Mode.AEBO_CONSTRAINED:
        feas_model = fit_feasibility(data.points, data.feasible)
        ok = data.feasible[finite]
        f_prime = float(z[ok].max()) if ok.any() else float(z.max())
    else:
        feas_model = None
        f_prime = float(z.max())
    incumbent_x = data.points[state.best_idx] if state.best_idx is not None else data.points[finite][np.argmax(z)]

    if cfg.mode is Mode.FIXED_BOUNDS_EI:
        tau, xi = None, float("nan")
        bounds = ExpansionBounds.from_box(cfg.lower, cfg.upper)
    else:
        xi = anneal_xi(AnnealSchedule(cfg.n_init + 1, cfg.budget, cfg.control.xi0), t)
        tau = adaptive_tau(f_prime, xi, cfg.control, model.k0)
        bounds = feasible_domain_bounds(data.points, model, tau, cfg.eigen_mode)

    ctx = AcquisitionContext(f_prime, cfg.epsilon, tau, feas_model)
    prop = propose(model, ctx, bounds, incumbent_x, cfg.search, rng, feas_model)
    if prop.fallback:
        log.debug("iteration %d: no candidate met the constraints, using minimum-variance point", t)
    return prop.x, (float("nan") if tau is None else tau), xi, bounds, prop.fallback


def run(blackbox, cfg: OptimizerConfig) -> RunRecord:
    """Run the optimizer for ``cfg.budget`` evaluations.

    ``blackbox`` is a :class:`BlackBox` or any callable x -> y or (y, feasible).
    Evaluation failures end the run early with ``failed=True`` and the rows
    collected so far.
    """
    dim = getattr(blackbox, "dim", cfg.dim)
    if dim != cfg.dim:
        raise ValueError(f"black box has dimension {dim}, bounds have {cfg.dim}")
    rng = np.random.default_rng(cfg.seed)
    state = _State(cfg)
    init_box = (cfg.lower, cfg.upper)
    try:
        for i, x in enumerate(lhs_sample(cfg.lower, cfg.upper, cfg.n_init, rng), start=1):
            y, feasible = _evaluate(blackbox, x, cfg, i)
            state.add(x, y, feasible, float("nan"), float("nan"), init_box, False)
        for t in range(cfg.n_init + 1, cfg.budget + 1):
            x, tau, xi, bounds, fallback = step(state, t, rng)
            y, feasible = _evaluate(blackbox, x, cfg, t)
            state.add(x, y, feasible, tau, xi, (bounds.lower, bounds.upper), fallback)
    except EvaluationError as exc:
        log.warning("run aborted: %s", exc)
        return state.record(failed=True, error=str(exc))
    return state.record()


def as_blackbox(func, dim: int) -> BlackBox:
    return BlackBox(func, dim)
