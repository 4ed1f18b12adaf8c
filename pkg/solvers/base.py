"""Contract shared by every ℓ1 solver backend.

A backend minimizes ``loss(offset + delta) + lam * ||delta[mask]||_1`` for a
:class:`~estimation.penalized.PenalizedProblem` and reports the final
``delta``. Certification (the KKT residual) is done by the caller, so a
backend only has to decide when it has converged and never prints.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.optimize import linprog

from estimation.errors import SolverDivergence

# Divergence guards: an iterate this large, or an objective this negative, means
# the problem is unbounded below (separation in the exp-linear loss).
COEF_BOUND = 1e6
OBJECTIVE_FLOOR = -1e12
RECESSION_FIRST = 25
RECESSION_TOL = 1e-9
RECESSION_MIN_COEF = 10.0


@dataclass
class SolveResult:
    delta: np.ndarray
    iterations: int
    converged: bool
    history: List[float] = field(default_factory=list)


class BaseSolver(ABC):
    """Abstract base class for penalized solver backends."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Backend identifier used by the registry."""

    @property
    def description(self) -> str:
        return self.__class__.__doc__.strip().splitlines()[0] if self.__class__.__doc__ else self.name

    @abstractmethod
    def solve(self, prob, start: np.ndarray, tol: float, max_iter: int) -> SolveResult:
        """Run from ``start`` (a delta) until the KKT residual is within ``tol``."""

    @staticmethod
    def check_divergence(prob, delta: np.ndarray, value: float) -> None:
        if (not np.all(np.isfinite(delta)) or not np.isfinite(value)
                or np.max(np.abs(delta), initial=0.0) > COEF_BOUND or value < OBJECTIVE_FLOOR):
            raise SolverDivergence(prob.loss_kind, coef=prob.offset + delta)

    @staticmethod
    def check_recession(prob, delta: np.ndarray) -> None:
        """Raise :class:`SolverDivergence` when the exp-linear objective is unbounded below.

        That happens exactly when some direction ``d`` keeps every active
        exp-role row's ``eta`` from growing (``X_pos d <= 0``) while the linear
        part falls faster than the penalty grows. The linear program looks
        for such a ``d`` in the unit box.
        """
        if prob.loss_kind != "exp_linear":
            return
        X = prob.design
        w = prob.sample_weights
        pos, neg = prob.responses[:, 0], prob.responses[:, 1]
        width = prob.width
        mask = prob.penalty_mask
        slope = X.T @ (w * neg) / prob.rows
        active = X[(pos > 0) & (w > 0)]

        # variables: d (width) then t (one per penalized coordinate), |d_k| <= t_k
        masked = np.flatnonzero(mask)
        bound_rows = np.zeros((2 * masked.size, width + masked.size))
        for j, k in enumerate(masked):
            bound_rows[2 * j, k], bound_rows[2 * j, width + j] = 1.0, -1.0
            bound_rows[2 * j + 1, k], bound_rows[2 * j + 1, width + j] = -1.0, -1.0
        exp_rows = np.hstack([active, np.zeros((active.shape[0], masked.size))])
        A_ub = np.vstack([exp_rows, bound_rows])
        cost = np.concatenate([-slope, np.full(masked.size, prob.lam)])
        bounds = [(-1.0, 1.0)] * width + [(0.0, 1.0)] * masked.size
        res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(A_ub.shape[0]), bounds=bounds, method="highs")
        if res.status != 0:
            return
        gain = -float(res.fun)
        if gain > RECESSION_TOL * max(1.0, float(np.sum(np.abs(slope)))):
            raise SolverDivergence(prob.loss_kind, coef=prob.offset + delta)


def recession_due(iteration: int, delta: np.ndarray) -> bool:
    """Recession checks run at iterations 25, 50, 100, 200, ... once some |delta_k| exceeds 10."""
    if iteration < RECESSION_FIRST or iteration % RECESSION_FIRST:
        return False
    if np.max(np.abs(delta), initial=0.0) <= RECESSION_MIN_COEF:
        return False
    ratio = iteration // RECESSION_FIRST
    return ratio & (ratio - 1) == 0
