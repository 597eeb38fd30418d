"""Preconditioned DC optimization with non-monotone line search.

The package minimizes objectives of the form ``E = f + g1 - g2`` where
``f`` is smooth and ``g1``, ``g2`` are convex.  Submodules:

model        problem abstraction and symmetric operators
linesearch   non-monotone search, extrapolation rules
precond      subproblem solvers
solvers      outer loops and baselines
scad         SCAD / Huber-SCAD least squares
graphgl      nonlocal graph Ginzburg-Landau segmentation
diagnostics  Lyapunov values, criticality and rate fitting
io           LIBSVM, PGM, trace and report files
cli          command line harness
"""

from precdca.model import DcProblem, SparseSymOperator, evaluate_energy
from precdca.solvers import SolverConfig, Termination, solve

__all__ = ["DcProblem", "SparseSymOperator", "evaluate_energy",
           "SolverConfig", "Termination", "solve"]

__version__ = "0.1.0"
