"""Constrained maximization of the acquisition inside the expansion bounds.

Candidates come from two equal-sized pools: uniform over the bounds (global)
and Gaussian around the incumbent (local).  The best feasible candidates of
each pool are polished by a batched projected-gradient ascent on a
quadratically penalized log acquisition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .acquisition import AcquisitionContext, FeasibilityModel, log_ei_partials
from .expansion import ExpansionBounds
from .gp import GpModel

MIN_VARIANCE = 1e-20


@dataclass(frozen=True)
class SearchConfig:
    n_candidates: Optional[int] = None
    local_fraction: float = 0.5
    local_radius_scale: float = 1.0
    refine_top: int = 5
    refine_steps: int = 40
    constraint_tolerance: float = 0.0
    penalty_weights: tuple = (1e2, 1e3, 1e4)

    def __post_init__(self):
        if self.n_candidates is not None and self.n_candidates < 2:
            raise ValueError("n_candidates must be at least 2")
        if not 0.0 <= self.local_fraction <= 1.0:
            raise ValueError("local_fraction must lie in [0, 1]")
        if not self.local_radius_scale > 0:
            raise ValueError("local_radius_scale must be positive")
        if self.refine_steps < 0 or self.refine_top < 0:
            raise ValueError("refine_steps and refine_top must be non-negative")
        if self.constraint_tolerance < 0:
            raise ValueError("constraint_tolerance must be non-negative")

    def candidates_for(self, dim: int) -> int:
        return self.n_candidates if self.n_candidates is not None else 100 * dim


@dataclass(frozen=True)
class Proposal:
    x: np.ndarray
    log_acquisition: float
    variance: float
    fallback: bool = False


class AcquisitionSurface:
    """Batched log acquisition with gradients and constraint residuals.

    Constraints are returned as residuals ``c <= 0`` when satisfied:
    ``var / (tau k0) - 1`` for the variance cap and ``-mu_c`` for the
    feasibility model (``Pr(C) >= 0.5`` exactly when its latent mean is >= 0).
    """

    def __init__(self, model: GpModel, ctx: AcquisitionContext,
                 feasibility: Optional[FeasibilityModel] = None, tolerance: float = 0.0):
        self.model = model
        self.ctx = ctx
        self.feasibility = feasibility if feasibility is not None else ctx.feasibility
        if self.feasibility is not None and self.feasibility.degenerate:
            self.feasibility = None
        self.tolerance = tolerance
        self.var_cap = None if ctx.tau is None else ctx.tau * model.k0

    def __call__(self, X):
        mean, var, dmean, dvar = self.model.predict_with_gradient(X)
        var = np.maximum(var, MIN_VARIANCE)
        std = np.sqrt(var)
        value, d_mu, d_sd = log_ei_partials(mean, std, self.ctx.threshold)
        grad = d_mu[:, None] * dmean + (d_sd / (2.0 * std))[:, None] * dvar
        cons, cons_grad = [], []
        if self.var_cap is not None:
            cons.append(var / self.var_cap - 1.0)
            cons_grad.append(dvar / self.var_cap)
        if self.feasibility is not None:
            logp, dlogp, latent, dlatent = self.feasibility.log_probability_with_gradient(X)
            value = value + logp
            grad = grad + dlogp
            cons.append(-latent)
            cons_grad.append(-dlatent)
        m, d = X.shape
        c = np.stack(cons, axis=1) if cons else np.zeros((m, 0))
        cg = np.stack(cons_grad, axis=1) if cons else np.zeros((m, 0, d))
        return value, grad, c, cg

    @property
    def residual_tolerance(self) -> np.ndarray:
        tol = []
        if self.var_cap is not None:
            tol.append(self.tolerance / self.var_cap)
        if self.feasibility is not None:
            tol.append(0.0)
        return np.array(tol)

    def variance(self, X):
        return self.model.predict(X)[1]

    def feasible(self, X):
        X = np.atleast_2d(X)
        ok = np.ones(len(X), dtype=bool)
        if self.var_cap is not None:
            ok &= self.variance(X) <= self.var_cap + self.tolerance
        if self.feasibility is not None:
            ok &= self.feasibility.probability(X) >= 0.5
        return ok


def _penalized(value, grad, c, cg, weight):
    viol = np.maximum(c, 0.0)
    p = value - weight * np.sum(viol**2, axis=1)
    dp = grad - 2.0 * weight * np.einsum("mk,mkd->md", viol, cg)
    return p, dp


def _restore(X, evaluate, bounds, tolerance, margin=1e-7, rounds=4):
    """Newton corrections along the most violated residual until feasible."""
    X = X.copy()
    rows = np.arange(len(X))
    out = evaluate(X)
    for _ in range(rounds):
        c, cg = out[2], out[3]
        excess = c - tolerance
        if c.shape[1] == 0 or np.all(excess <= 0):
            break
        j = np.argmax(excess, axis=1)
        cj = c[rows, j] + margin
        gj = cg[rows, j]
        g2 = np.einsum("md,md->m", gj, gj)
        move = (excess[rows, j] > 0) & (g2 > 1e-200)
        if not move.any():
            break
        shift = (cj[move] / g2[move])[:, None] * gj[move]
        X[move] = np.clip(X[move] - shift, bounds.lower, bounds.upper)
        out = evaluate(X)
    return X, out


def _tangent(grad, c, cg, active_band=1e-4):
    """Drop gradient components that push through near-active residuals."""
    g = grad.copy()
    for j in range(c.shape[1]):
        n = cg[:, j]
        nn = np.einsum("md,md->m", n, n)
        gn = np.einsum("md,md->m", g, n)
        hit = (c[:, j] > -active_band) & (gn > 0) & (nn > 0)
        g[hit] -= (gn[hit] / nn[hit])[:, None] * n[hit]
    return g


def refine(starts, evaluate: Callable, bounds: ExpansionBounds, *, step: float,
           steps: int = 100, penalty_weights=(1e2, 1e3, 1e4), tolerance=0.0,
           min_step: float = None, ftol: float = 1e-9):
    """Local ascent from each row of ``starts``, never leaving ``bounds``.

    ``evaluate(X)`` returns (value, grad, residuals, residual_grads); a point
    is feasible when every residual is <= ``tolerance``.  Infeasible starts
    first climb a quadratically penalized objective with escalating weights
    and are then pulled onto the feasible side by Newton corrections.
    Feasible points follow the gradient projected onto the tangent of any
    active residual, re-projecting after each step.  A step is kept only when
    it improves the (penalized) value, so the returned point is never worse
    than its start.  Points that never become feasible come back as the last
    penalized iterate.
    """
    X = np.clip(np.atleast_2d(np.asarray(starts, dtype=float)), bounds.lower, bounds.upper)
    m = len(X)
    if m == 0 or steps == 0:
        return X
    min_step = step * 1e-5 if min_step is None else min_step
    max_step = step * 100.0

    def feasible(c):
        return np.all(c <= tolerance, axis=1)

    val, grad, c, cg = evaluate(X)

    todo = ~feasible(c)
    for weight in penalty_weights:
        if not todo.any():
            break
        p, dp = _penalized(val, grad, c, cg, weight)
        s = np.where(todo, step, 0.0)
        for _ in range(steps):
            norm = np.linalg.norm(dp, axis=1)
            active = (s > min_step) & np.isfinite(norm) & (norm > 0)
            if not active.any():
                break
            idx = np.flatnonzero(active)
            trial = np.clip(X[idx] + (s[idx] / norm[idx])[:, None] * dp[idx], bounds.lower, bounds.upper)
            tv, tg, tc, tcg = evaluate(trial)
            tp, tdp = _penalized(tv, tg, tc, tcg, weight)
            up = np.isfinite(tp) & (tp > p[idx])
            acc = idx[up]
            X[acc], val[acc], grad[acc], c[acc], cg[acc] = trial[up], tv[up], tg[up], tc[up], tcg[up]
            p[acc], dp[acc] = tp[up], tdp[up]
            s[acc] = np.minimum(s[acc] * 2.0, max_step)
            s[idx[~up]] *= 0.5
            # a point that crossed into the feasible set is finished here
            s[acc[feasible(tc[up])]] = 0.0
        todo = ~feasible(c)

    if todo.any():
        idx = np.flatnonzero(todo)
        Y, (yv, yg, yc, ycg) = _restore(X[idx], evaluate, bounds, tolerance)
        ok = feasible(yc)
        fix = idx[ok]
        X[fix], val[fix], grad[fix], c[fix], cg[fix] = Y[ok], yv[ok], yg[ok], yc[ok], ycg[ok]

    s = np.where(feasible(c), step, 0.0)
    for _ in range(steps):
        g = _tangent(grad, c, cg)
        norm = np.linalg.norm(g, axis=1)
        active = (s > min_step) & np.isfinite(norm) & (norm > 0)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        trial = np.clip(X[idx] + (s[idx] / norm[idx])[:, None] * g[idx], bounds.lower, bounds.upper)
        trial, (tv, tg, tc, tcg) = _restore(trial, evaluate, bounds, tolerance)
        up = feasible(tc) & np.isfinite(tv) & (tv > val[idx])
        acc = idx[up]
        # negligible gains count as convergence: keep the point, shrink the step
        small = tv[up] - val[acc] <= ftol * np.maximum(1.0, np.abs(val[acc]))
        X[acc], val[acc], grad[acc], c[acc], cg[acc] = trial[up], tv[up], tg[up], tc[up], tcg[up]
        s[acc] = np.where(small, s[acc] * 0.5, np.minimum(s[acc] * 2.0, max_step))
        s[idx[~up]] *= 0.5
    return X


def _top(values, mask, k):
    idx = np.flatnonzero(mask)
    order = np.argsort(-values[idx], kind="stable")
    return idx[order[:k]]


def propose(model: GpModel, ctx: AcquisitionContext, bounds: ExpansionBounds, incumbent_x,
            cfg: SearchConfig, rng: np.random.Generator,
            feasibility: Optional[FeasibilityModel] = None) -> Proposal:
    """Next point to evaluate: maximal acquisition among feasible candidates."""
    d = model.dim
    lower, upper = bounds.lower, bounds.upper
    surface = AcquisitionSurface(model, ctx, feasibility, cfg.constraint_tolerance)

    n = cfg.candidates_for(d)
    n_local = int(round(n * cfg.local_fraction))
    n_global = n - n_local
    radius = cfg.local_radius_scale * model.lengthscale
    glob = lower + (upper - lower) * rng.random((n_global, d))
    loc = np.clip(np.asarray(incumbent_x, dtype=float) + radius * rng.standard_normal((n_local, d)),
                  lower, upper)
    cands = np.vstack([glob, loc])
    pool = np.r_[np.zeros(n_global, dtype=int), np.ones(n_local, dtype=int)]

    val, _, c, _ = surface(cands)
    ok = surface.feasible(cands)
    violation = np.sum(np.maximum(c, 0.0), axis=1)
    starts = []
    for p in (0, 1):
        in_pool = pool == p
        chosen = _top(val, in_pool & ok, cfg.refine_top)
        if chosen.size == 0 and in_pool.any():
            chosen = _top(-violation, in_pool, cfg.refine_top)
        starts.append(chosen)
    starts = np.concatenate(starts)

    if starts.size and cfg.refine_steps > 0:
        refined = refine(cands[starts], surface, bounds, step=0.1 * model.lengthscale,
                         steps=cfg.refine_steps, penalty_weights=cfg.penalty_weights,
                         tolerance=surface.residual_tolerance)
        rv = surface(refined)[0]
        cands = np.vstack([cands, refined])
        val = np.r_[val, rv]
        ok = np.r_[ok, surface.feasible(refined)]

    var = surface.variance(cands)
    if ok.any():
        i = _top(val, ok, 1)[0]
        return Proposal(cands[i].copy(), float(val[i]), float(var[i]), False)
    i = int(np.argmin(var))
    return Proposal(cands[i].copy(), float(val[i]), float(var[i]), True)
