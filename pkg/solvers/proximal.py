"""Monotone accelerated proximal gradient (FISTA with backtracking and restart)."""

from __future__ import annotations

import math

import numpy as np

from estimation.links import EXP_CLIP
from estimation.penalized import (
    exp_role_overflow,
    kkt_violations,
    row_derivatives,
    row_losses,
    soft_threshold,
)

from .base import BaseSolver, SolveResult, recession_due

MAX_BACKTRACKS = 60
STEP_GROWTH = 0.8
LINESEARCH_SLACK = 10 * np.finfo(float).eps


class ProximalGradientSolver(BaseSolver):
    """Accelerated proximal gradient with backtracking line search."""

    name = "proximal"

    def solve(self, prob, start, tol, max_iter):
        X = prob.design
        rows = prob.rows
        mask = prob.penalty_mask
        lam = prob.lam

        def smooth(delta, clip):
            eta = X @ (prob.offset + delta)
            return float(np.sum(row_losses(prob, eta, clip)) / rows), eta

        def penalty(delta):
            return lam * float(np.sum(np.abs(delta[mask])))

        x = np.array(start, dtype=float)
        fx, _ = smooth(x, clip=False)
        F_x = fx + penalty(x)
        self.check_divergence(prob, x, F_x)
        history = [F_x]
        y = x.copy()
        t = 1.0
        L = 1.0

        for it in range(1, max_iter + 1):
            f_y, eta_y = smooth(y, clip=True)
            grad_y = X.T @ row_derivatives(prob, eta_y, clip=True) / rows

            for _ in range(MAX_BACKTRACKS):
                z = soft_threshold(y - grad_y / L, lam / L, mask)
                step = z - y
                f_z, eta_z = smooth(z, clip=False)
                # Trial points past the exp clip are rejected outright.
                if (math.isfinite(f_z) and not exp_role_overflow(prob, eta_z, EXP_CLIP)
                        and f_z <= f_y + grad_y @ step + 0.5 * L * (step @ step)
                        + LINESEARCH_SLACK * abs(f_y)):
                    break
                L *= 2.0
            else:
                # Line search exhausted: keep the current iterate and report.
                return SolveResult(x, it, False, history)

            F_z = f_z + penalty(z)
            self.check_divergence(prob, z, F_z)
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            if F_z <= F_x:
                x_prev, x, F_x = x, z, F_z
                y = x + ((t - 1.0) / t_next) * (x - x_prev)
                t = t_next
                L *= STEP_GROWTH
            elif np.array_equal(y, x):
                # A plain step from the best point failed to descend: shorten it.
                L *= 2.0
            else:
                # Restart momentum from the best point.
                y = x.copy()
                t = 1.0
            if recession_due(it, x):
                self.check_recession(prob, x)
            history.append(F_x)

            eta_x = X @ (prob.offset + x)
            grad_x = X.T @ row_derivatives(prob, eta_x, clip=False) / rows
            viol = kkt_violations(prob, prob.offset + x, grad=grad_x)
            if np.all(np.isfinite(viol)) and (viol.size == 0 or viol.max() <= tol):
                return SolveResult(x, it, True, history)

        return SolveResult(x, max_iter, False, history)
