"""Cyclic coordinate descent with one-dimensional proximal Newton steps."""

from __future__ import annotations

import numpy as np

from estimation.penalized import kkt_violations, row_curvatures, row_derivatives, row_losses

from .base import BaseSolver, SolveResult, recession_due

MAX_HALVINGS = 50
MIN_CURVATURE = 1e-12


class CoordinateDescentSolver(BaseSolver):
    """Cyclic coordinate descent; each move is a halving-safeguarded Newton-prox step."""

    name = "coordinate"

    def solve(self, prob, start, tol, max_iter):
        X = prob.design
        rows = prob.rows
        mask = prob.penalty_mask
        lam = prob.lam

        delta = np.array(start, dtype=float)
        eta = X @ (prob.offset + delta)
        value = float(np.sum(row_losses(prob, eta)) / rows) + lam * float(np.sum(np.abs(delta[mask])))
        self.check_divergence(prob, delta, value)
        history = [value]

        for sweep in range(1, max_iter + 1):
            for k in range(prob.width):
                col = X[:, k]
                grad_k = float(col @ row_derivatives(prob, eta, clip=True)) / rows
                curv_k = max(float((col * col) @ row_curvatures(prob, eta)) / rows, MIN_CURVATURE)
                target = delta[k] - grad_k / curv_k
                if mask[k]:
                    thresh = lam / curv_k
                    target = np.sign(target) * max(abs(target) - thresh, 0.0)
                step = target - delta[k]
                if step == 0.0:
                    continue
                pen_k = lam * abs(delta[k]) if mask[k] else 0.0
                base = float(np.sum(row_losses(prob, eta)) / rows) + pen_k
                for _ in range(MAX_HALVINGS):
                    trial_eta = eta + step * col
                    new_k = delta[k] + step
                    trial = float(np.sum(row_losses(prob, trial_eta)) / rows)
                    trial += lam * abs(new_k) if mask[k] else 0.0
                    if np.isfinite(trial) and trial <= base:
                        delta[k] = new_k
                        eta = trial_eta
                        break
                    step *= 0.5

            value = float(np.sum(row_losses(prob, eta)) / rows) + lam * float(np.sum(np.abs(delta[mask])))
            self.check_divergence(prob, delta, value)
            history.append(value)
            if recession_due(sweep, delta):
                self.check_recession(prob, delta)

            grad = X.T @ row_derivatives(prob, eta) / rows
            viol = kkt_violations(prob, prob.offset + delta, grad=grad)
            if np.all(np.isfinite(viol)) and (viol.size == 0 or viol.max() <= tol):
                return SolveResult(delta, sweep, True, history)

        return SolveResult(delta, max_iter, False, history)
