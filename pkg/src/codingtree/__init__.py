"""Monte Carlo over random coding trees for fully nonlinear parabolic PDEs."""

from .codes import IDENTITY, Deriv, FDeriv, Identity, check_bounds, mechanism, terminal_value
from .dsem import DDProblemSpec, GradCode, dd_mechanism, dd_sample_H
from .expr import differentiate, evaluate, parse
from .fdb import compositions, enumerate_fdb
from .mc import RunConfig, RunStatistics, error_report, merge, run_estimate, run_repeated
from .tree import ProblemSpec, sample_H

__version__ = "0.1.0"

__all__ = [
    "IDENTITY", "Identity", "Deriv", "FDeriv", "GradCode",
    "parse", "differentiate", "evaluate",
    "compositions", "enumerate_fdb",
    "mechanism", "terminal_value", "check_bounds",
    "ProblemSpec", "sample_H", "DDProblemSpec", "dd_mechanism", "dd_sample_H",
    "RunConfig", "RunStatistics", "merge", "run_estimate", "run_repeated", "error_report",
]
