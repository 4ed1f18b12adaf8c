"""Pluggable ℓ1 solver backends (proximal gradient, coordinate descent)."""

from .base import BaseSolver, SolveResult
from .registry import available_solvers, get_solver

__all__ = ["BaseSolver", "SolveResult", "available_solvers", "get_solver"]
