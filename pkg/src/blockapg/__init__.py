"""Accelerated proximal-gradient solvers for nonconvex regularized least squares."""

from .numkit import BlockPartition, ColMatrix, make_partition
from .problems import ProblemInstance, StepPolicy, build_problem, gen_sparse_ls, objective
from .regularizers import RegularizerSpec
from .solvers import (
    SolverConfig,
    Trace,
    check_assumptions,
    run_apg,
    run_apgnc_plus,
    run_bcoapgnc_plus,
    run_bpl,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "BlockPartition",
    "ColMatrix",
    "ProblemInstance",
    "RegularizerSpec",
    "SolverConfig",
    "StepPolicy",
    "Trace",
    "build_problem",
    "check_assumptions",
    "gen_sparse_ls",
    "make_partition",
    "objective",
    "run_apg",
    "run_apgnc_plus",
    "run_bcoapgnc_plus",
    "run_bpl",
    "solve",
]
