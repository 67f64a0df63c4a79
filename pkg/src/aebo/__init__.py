"""Bayesian optimization with an adaptively expanding search region.

The optimizer starts from an initial box that need not contain the optimum
and only samples where the GP posterior variance stays below tau * k0, with
tau re-solved every iteration so that the expected improvement on that
variance boundary matches a target level.
"""

from .acquisition import (AcquisitionContext, FeasibilityModel, constrained_acquisition,
                          expected_improvement, fit_feasibility, log_expected_improvement)
from .adaptive_control import ControlParams, adaptive_tau, anneal_xi, solve_tau
from .benchmarks import BlackBox, TestProblem, get_problem, initial_window, metrics, noisy
from .expansion import EigenMode, ExpansionBounds, expansion_rate, feasible_domain_bounds
from .gp import GpModel, KernelParams, ObservationSet, fit
from .inner_search import Proposal, SearchConfig, propose
from .optimizer import Mode, OptimizerConfig, RunRecord, lhs_sample, run

__all__ = [
    "AcquisitionContext", "FeasibilityModel", "constrained_acquisition", "expected_improvement",
    "fit_feasibility", "log_expected_improvement", "ControlParams", "adaptive_tau", "anneal_xi",
    "solve_tau", "BlackBox", "TestProblem", "get_problem", "initial_window", "metrics", "noisy",
    "EigenMode", "ExpansionBounds", "expansion_rate", "feasible_domain_bounds", "GpModel",
    "KernelParams", "ObservationSet", "fit", "Proposal", "SearchConfig", "propose", "Mode",
    "OptimizerConfig", "RunRecord", "lhs_sample", "run",
]
__version__ = "0.1.0"
