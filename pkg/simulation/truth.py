"""Population quantities of a simulation setting, by large Monte-Carlo draws.

Only the columns that enter the outcome or selection rules are drawn; the
noise covariates are independent of everything and do not change ``beta0``,
the ROC curve or the prevalence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score
from sklearn.metrics import roc_curve as empirical_roc_curve

from estimation.beta import solve_logistic_score
from estimation.links import g, g_dot
from estimation.roc import DEFAULT_U, format_u
from orchestrator.parallel import stream

from .generators import SimConfig, draw_population, outcome_coefficients, selection_coefficients

CHUNK_ROWS = 250_000
U_GRID = np.linspace(0.0, 1.0, 1001)


@dataclass
class GroundTruth:
    config_id: str
    beta0: np.ndarray
    beta0_se: np.ndarray
    auc0: float
    auc0_se: float
    roc0: pd.DataFrame = field(repr=False)
    mu0: float
    mu0_se: float
    rows: int
    source_share: float
    alpha0: Optional[np.ndarray] = field(default=None, repr=False)
    gamma0: Optional[np.ndarray] = field(default=None, repr=False)

    def roc_at(self, u: float) -> float:
        return float(np.interp(u, self.roc0["u"].to_numpy(), self.roc0["roc"].to_numpy()))

    def roc_se_at(self, u: float) -> float:
        return float(np.interp(u, self.roc0["u"].to_numpy(), self.roc0["se"].to_numpy()))

    def targets(self, u_values: Sequence[float] = DEFAULT_U) -> Dict[str, float]:
        """True values keyed like the bootstrap targets."""
        out = {f"beta_{j + 1}": float(b) for j, b in enumerate(self.beta0)}
        out["auc"] = self.auc0
        for u in u_values:
            out[f"roc_at_{format_u(u)}"] = self.roc_at(u)
        return out

    def to_dict(self, u_values: Sequence[float] = DEFAULT_U) -> Dict[str, Any]:
        return {
            "config_id": self.config_id,
            "beta0": self.beta0.tolist(),
            "beta0_se": self.beta0_se.tolist(),
            "auc0": self.auc0,
            "auc0_se": self.auc0_se,
            "roc_at": {format_u(u): self.roc_at(u) for u in u_values},
            "mu0": self.mu0,
            "mu0_se": self.mu0_se,
            "rows": self.rows,
            "source_share": self.source_share,
        }


def draw_target_population(cfg: SimConfig, rows: int, seed_key: int = 0):
    """``rows`` labelled target draws on the active columns, plus the pooled source share."""
    rng = stream(cfg.seed, "truth", seed_key)
    width = cfg.active_columns
    xs, ys = [], []
    kept = drawn = sources = 0
    while kept < rows:
        x, s, y = draw_population(cfg, CHUNK_ROWS, rng, width=width)
        drawn += CHUNK_ROWS
        sources += int(s.sum())
        xs.append(x[~s])
        ys.append(y[~s])
        kept += int((~s).sum())
    return np.vstack(xs)[:rows], np.concatenate(ys)[:rows], sources / drawn


def _auc_se(auc: float, positives: int, negatives: int) -> float:
    """Hanley-McNeil standard error."""
    q1 = auc / (2.0 - auc)
    q2 = 2.0 * auc * auc / (1.0 + auc)
    var = (auc * (1 - auc) + (positives - 1) * (q1 - auc * auc) + (negatives - 1) * (q2 - auc * auc))
    return math.sqrt(max(var, 0.0) / (positives * negatives))


def tabulate_roc(y: np.ndarray, scores: np.ndarray, grid: np.ndarray = U_GRID) -> pd.DataFrame:
    """``ROC(u) = TPR(inf{c : FPR(c) <= u})`` on ``grid`` from an empirical curve."""
    fpr, tpr, _ = empirical_roc_curve(y, scores)
    idx = np.searchsorted(fpr, grid, side="right") - 1
    roc = tpr[np.clip(idx, 0, tpr.size - 1)]
    roc = np.maximum.accumulate(roc)
    roc[grid >= 1.0] = 1.0
    positives = float(np.sum(y == 1))
    se = np.sqrt(roc * (1.0 - roc) / positives)
    return pd.DataFrame({"u": grid, "roc": roc, "se": se})


def ground_truth(cfg: SimConfig, rows: Optional[int] = None, seed_key: int = 0) -> GroundTruth:
    """Solve the target-population estimating equation and score the resulting rule."""
    rows = cfg.truth_rows if rows is None else rows
    x, y, source_share = draw_target_population(cfg, rows, seed_key)
    A = x[:, : cfg.q]

    weights = np.full(rows, 1.0 / rows)
    beta0 = solve_logistic_score(A, A.T @ y / rows, weights)

    eta = A @ beta0
    sigma = A.T @ (g_dot(eta)[:, None] * A) / rows
    resid = A * (y - g(eta))[:, None]
    meat = resid.T @ resid / rows
    sigma_inv = np.linalg.inv(sigma)
    beta0_se = np.sqrt(np.diag(sigma_inv @ meat @ sigma_inv) / rows)

    positives = int(y.sum())
    auc0 = float(roc_auc_score(y, eta))
    mu0 = float(y.mean())

    full_width = cfg.p + cfg.q
    gamma0 = outcome_coefficients(cfg, full_width) if cfg.config_id != "ii" else None
    alpha0 = None
    if cfg.config_id != "iii":
        alpha0 = selection_coefficients(cfg, full_width)
        alpha0[0] += math.log(source_share / (1.0 - source_share))

    return GroundTruth(
        config_id=cfg.config_id,
        beta0=beta0,
        beta0_se=beta0_se,
        auc0=auc0,
        auc0_se=_auc_se(auc0, positives, rows - positives),
        roc0=tabulate_roc(y, eta),
        mu0=mu0,
        mu0_se=math.sqrt(mu0 * (1.0 - mu0) / rows),
        rows=rows,
        source_share=source_share,
        alpha0=alpha0,
        gamma0=gamma0,
    )
