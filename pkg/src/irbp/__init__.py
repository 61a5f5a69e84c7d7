"""Adaptive finite elements driven by l1 minimisation over hierarchical hat dictionaries."""

from .dictionary import (BasisId, CapacityError, DomainError, Family, IndexSet, RefinementTree,
                         count_basis, eval_basis, refine, tree_closure)
from .lp import LpSolution, LpStatus, basis_pursuit, l1_regression, least_squares
from .problems import ProblemSpec, get_problem, problem_1d_multi_arctan, problem_2d_polynomial
from .solver import IrbpConfig, IrbpState, irbp_run, irbp_step, reconstruct

__version__ = "0.1.0"

__all__ = [
    "BasisId", "CapacityError", "DomainError", "Family", "IndexSet", "RefinementTree", "count_basis",
    "eval_basis", "refine", "tree_closure",
    "LpSolution", "LpStatus", "basis_pursuit", "l1_regression", "least_squares",
    "ProblemSpec", "get_problem", "problem_1d_multi_arctan", "problem_2d_polynomial",
    "IrbpConfig", "IrbpState", "irbp_run", "irbp_step", "reconstruct",
]
