import numpy as np
import pytest

from aebo import optimizer as opt
from aebo.adaptive_control import ControlParams
from aebo.benchmarks import get_problem, initial_window
from aebo.optimizer import Mode, OptimizerConfig, lhs_sample, run


def _quadratic(x):
    return -(x[0] - 5.0) ** 2


def _branin_cfg(**kw):
    prob = get_problem("branin")
    lo, hi, _ = initial_window(prob)
    base = dict(n_init=6, budget=20, seed=0)
    base.update(kw)
    return prob, OptimizerConfig(lo, hi, **base)


class TestLhs:
    def test_single_point(self):
        x = lhs_sample([0, 0], [1, 1], 1, np.random.default_rng(0))
        assert x.shape == (1, 2) and np.all((x >= 0) & (x <= 1))

    @pytest.mark.parametrize("seed", range(100))
    def test_stratified(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 30))
        x = lhs_sample([0, -2], [1, 2], n, rng)
        u = np.column_stack([x[:, 0], (x[:, 1] + 2) / 4])
        for j in range(2):
            strata = np.floor(u[:, j] * n).astype(int)
            assert sorted(strata) == list(range(n))

    def test_four_points_unit_box(self):
        x = lhs_sample([0, 0], [1, 1], 4, np.random.default_rng(3))
        for j in range(2):
            assert sorted(np.floor(x[:, j] * 4).astype(int)) == [0, 1, 2, 3]

    def test_mean(self):
        x = lhs_sample(np.zeros(3), np.ones(3), 1000, np.random.default_rng(0))
        assert np.all(np.abs(x.mean(axis=0) - 0.5) < 0.02)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            lhs_sample([0, 1], [1, 1], 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            lhs_sample([0], [1], 0, np.random.default_rng(0))


class TestConfig:
    def test_defaults(self):
        cfg = OptimizerConfig([0, 0, 0], [1, 1, 1])
        assert cfg.n_init == 15 and cfg.budget == 150
        assert cfg.control == ControlParams(xi0=0.1, kappa=0.1, delta=0.01)
        assert cfg.epsilon == 0.01 and cfg.mode is Mode.AEBO

    @pytest.mark.parametrize("kw", [dict(n_init=1), dict(n_init=10, budget=5), dict(sense="up"),
                                    dict(lower=[0, 1], upper=[1, 1])])
    def test_invalid(self, kw):
        base = dict(lower=[0, 0], upper=[1, 1])
        base.update(kw)
        with pytest.raises(ValueError):
            OptimizerConfig(**base)


class TestRun:
    def test_budget_equals_n_init(self):
        prob, cfg = _branin_cfg(budget=6)
        rec = run(prob.as_blackbox(), cfg)
        assert len(rec) == 6
        assert rec.f_best == min(r.y for r in rec.rows)
        assert all(np.isnan(r.tau) for r in rec.rows)

    def test_optimum_outside_initial_bounds(self):
        cfg = OptimizerConfig([0.0], [1.0], n_init=5, budget=25, sense="maximize", seed=1)
        rec = run(_quadratic, cfg)
        init_best = max(r.y for r in rec.rows[:5])
        assert rec.f_best > init_best
        assert rec.points[:, 0].max() > 1.0

    def test_deterministic(self):
        prob, cfg = _branin_cfg()
        a, b = run(prob.as_blackbox(), cfg), run(prob.as_blackbox(), cfg)
        assert len(a) == len(b)
        for ra, rb in zip(a.rows, b.rows):
            assert ra.iteration == rb.iteration
            assert np.array_equal(ra.x, rb.x) and ra.y == rb.y and ra.best == rb.best
            assert np.array_equal(ra.tau, rb.tau, equal_nan=True)
            assert np.array_equal(ra.box_lower, rb.box_lower)
        assert np.array_equal(a.x_best, b.x_best)

    def test_maximize_matches_negated_minimize(self):
        prob, cfg = _branin_cfg(budget=12)
        a = run(prob.as_blackbox(), cfg)
        b = run(lambda x: -prob.evaluate(x), cfg.with_(sense="maximize"))
        assert np.allclose(a.points, b.points)
        assert b.f_best == pytest.approx(-a.f_best)

    def test_evaluation_count_equals_budget(self):
        calls = []
        cfg = OptimizerConfig([0, 0], [1, 1], n_init=4, budget=11)
        rec = run(lambda x: calls.append(x) or float(np.sum(x)), cfg)
        assert len(calls) == 11 == len(rec)

    def test_dimension_mismatch(self):
        prob, cfg = _branin_cfg()
        with pytest.raises(ValueError):
            run(get_problem("hartmann3").as_blackbox(), cfg)

    def test_non_finite_aborts_unconstrained(self):
        calls = []

        def f(x):
            calls.append(x)
            return np.nan if len(calls) == 8 else float(np.sum(x**2))

        rec = run(f, OptimizerConfig([0, 0], [1, 1], n_init=5, budget=15))
        assert rec.failed and "iteration 8" in rec.error
        assert len(rec) == 7 and rec.f_best == min(r.y for r in rec.rows)

    def test_non_finite_is_infeasible_when_constrained(self):
        def f(x):
            return (None, False) if x[0] > 0.5 else (float(np.sum(x**2)), True)

        cfg = OptimizerConfig([0, 0], [1, 1], n_init=6, budget=14, mode="aebo_constrained")
        rec = run(f, cfg)
        assert not rec.failed and len(rec) == 14
        bad = [r for r in rec.rows if np.isnan(r.y)]
        assert bad and not any(r.feasible for r in bad)
        assert np.isfinite(rec.f_best)

    def test_fixed_bounds_stays_inside(self):
        prob, cfg = _branin_cfg(mode="fixed_bounds_ei")
        rec = run(prob.as_blackbox(), cfg)
        X = rec.points
        assert np.all((X >= cfg.lower) & (X <= cfg.upper))
        assert all(np.isnan(r.tau) for r in rec.rows)


class _ProposalChecker:
    """Wraps propose() and asserts the proposal contract at every call."""

    def __init__(self, monkeypatch):
        self.inner = opt.propose
        self.calls = 0
        monkeypatch.setattr(opt, "propose", self)

    def __call__(self, model, ctx, bounds, incumbent_x, cfg, rng, feasibility=None):
        prop = self.inner(model, ctx, bounds, incumbent_x, cfg, rng, feasibility)
        self.calls += 1
        if not prop.fallback:
            assert bounds.contains(prop.x, tol=1e-12).all()
            var = model.predict(prop.x[None])[1][0]
            if ctx.tau is not None:
                assert var <= ctx.tau * model.k0 + 1e-9
            if feasibility is not None:
                assert feasibility.probability(prop.x[None])[0] >= 0.5
        return prop


def _check_run(rec, cfg):
    assert len(rec) == cfg.budget
    best = rec.best_trace
    # constrained runs have no incumbent until the first feasible point
    seen = np.isfinite(best)
    assert np.all(seen[np.argmax(seen):])
    best = best[seen]
    assert np.all(np.diff(best) <= 0) if cfg.sense == "minimize" else np.all(np.diff(best) >= 0)
    X = rec.points
    lo, hi = X[:1].copy(), X[:1].copy()
    for t in range(1, len(X)):
        new_lo, new_hi = np.minimum(lo, X[t]), np.maximum(hi, X[t])
        assert np.all(new_lo <= lo) and np.all(new_hi >= hi)
        lo, hi = new_lo, new_hi
    if cfg.mode is not Mode.FIXED_BOUNDS_EI:
        taus = rec.taus[cfg.n_init:]
        assert np.all((taus >= cfg.control.tau_min) & (taus <= cfg.control.tau_max))
        xis = np.array([r.xi for r in rec.rows[cfg.n_init:]])
        assert np.all(np.diff(xis) <= 0) and xis[-1] == 0.0


class TestRunInvariants:
    @pytest.mark.parametrize("seed", range(4))
    def test_aebo(self, seed, monkeypatch):
        checker = _ProposalChecker(monkeypatch)
        prob, cfg = _branin_cfg(seed=seed, budget=25)
        rec = run(prob.as_blackbox(), cfg)
        _check_run(rec, cfg)
        assert checker.calls == cfg.budget - cfg.n_init

    @pytest.mark.parametrize("seed", range(2))
    def test_constrained(self, seed, monkeypatch):
        _ProposalChecker(monkeypatch)
        prob = get_problem("constrained_rastrigin")
        lo, hi, _ = initial_window(prob)
        cfg = OptimizerConfig(lo, hi, n_init=8, budget=25, mode="aebo_constrained", seed=seed)
        rec = run(prob.as_blackbox(), cfg)
        _check_run(rec, cfg)
        if rec.x_best is not None:
            assert prob.is_feasible(rec.x_best)
            feasible_ys = [r.y for r in rec.rows if r.feasible]
            assert rec.f_best == min(feasible_ys)

    def test_noisy_mode(self, monkeypatch):
        _ProposalChecker(monkeypatch)
        prob, cfg = _branin_cfg(noisy=True, sense="minimize")
        rec = run(prob.as_blackbox(0.1, np.random.default_rng(0)), cfg)
        _check_run(rec, cfg)

    def test_maximize(self, monkeypatch):
        _ProposalChecker(monkeypatch)
        cfg = OptimizerConfig([0.0], [1.0], n_init=4, budget=14, sense="maximize")
        _check_run(run(_quadratic, cfg), cfg)
