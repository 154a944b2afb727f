"""Deterministic desk-scale solver for the MPC programs."""

from .minlp import (
    SolveResult,
    SolveStats,
    SolverSettings,
    relax_lower_bound,
    solve_minlp,
    solve_qp,
    solve_sqp,
)

__all__ = [
    "SolverSettings",
    "SolveStats",
    "SolveResult",
    "solve_qp",
    "solve_sqp",
    "relax_lower_bound",
    "solve_minlp",
]
