"""Multiplier-bootstrap inference for β, AUC and ROC(u).

Each replicate draws one standard-exponential multiplier per pooled row,
re-solves the estimating equation for every coordinate and recomputes every
TP/FP sum with each row's term scaled by its multiplier. All nuisance fits
and the calibration cutoffs stay frozen at their point-estimate values.

An influence-function standard error for β is available as a cross-check
(:func:`sandwich_se`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from orchestrator.parallel import parallel_map, stream

from .beta import BetaEstimate, solve_estimating_equation
from .data import Dataset
from .errors import BootstrapError, TransferError
from .links import g
from .roc import DEFAULT_U, CalibratedGrid, RocEstimate, format_u, roc_at, roc_curve

MIN_REPLICATES = 100
MAX_DROP_FRACTION = 0.05
MULTIPLIER_LAW = "standard_exponential"


@dataclass
class BootstrapResult:
    target: str
    point: float
    se: float
    ci_lo: float
    ci_hi: float
    level: float
    B: int
    method: str = "normal"

    def to_dict(self) -> Dict[str, Any]:
        return {"target": self.target, "method": self.method, "point": self.point, "se": self.se,
                "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "level": self.level, "B": self.B}


@dataclass
class BootstrapReport:
    results: List[BootstrapResult]
    requested: int
    dropped: int
    replicates: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    seed: int = 0

    def metadata(self) -> Dict[str, Any]:
        return {
            "B": self.requested,
            "kept": self.requested - self.dropped,
            "dropped": self.dropped,
            "multiplier_law": MULTIPLIER_LAW,
            "nuisances_frozen": True,
            "grid_frozen": True,
            "seed": self.seed,
        }

    def get(self, target: str, method: str = "normal") -> BootstrapResult:
        for result in self.results:
            if result.target == target and result.method == method:
                return result
        raise KeyError(f"{target}/{method}")

    def to_dict(self) -> Dict[str, Any]:
        return {"bootstrap": self.metadata(), "intervals": [r.to_dict() for r in self.results]}


def beta_target(j: int) -> str:
    return f"beta_{j + 1}"


def roc_target(u: float) -> str:
    return f"roc_at_{format_u(u)}"


def draw_multipliers(d: Dataset, seed: int, b: int, unit: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Source and target multipliers for replicate ``b`` (all ones when ``unit``)."""
    if unit:
        return np.ones(d.n), np.ones(d.N)
    xi = stream(seed, "bootstrap", b).standard_exponential(d.n + d.N)
    return xi[: d.n], xi[d.n:]


def intervals(target: str, point: float, draws: np.ndarray, level: float) -> List[BootstrapResult]:
    """Normal and percentile intervals from replicate ``draws``."""
    B = int(draws.size)
    se = float(np.std(draws, ddof=1)) if B > 1 else 0.0
    z = float(stats.norm.ppf((1.0 + level) / 2.0))
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail])
    return [
        BootstrapResult(target, float(point), se, float(point - z * se), float(point + z * se), level, B, "normal"),
        BootstrapResult(target, float(point), se, float(lo), float(hi), level, B, "percentile"),
    ]


def multiplier_bootstrap(d: Dataset, beta_est: BetaEstimate, calibrated: CalibratedGrid,
                         roc_point: RocEstimate, B: int = 500, level: float = 0.95, seed: int = 0,
                         u_values: Sequence[float] = DEFAULT_U, threads: int = 1,
                         eval_points: Optional[int] = None,
                         unit_multipliers: bool = False) -> BootstrapReport:
    """Bootstrap se and CIs for every β coordinate, ROC(u) and AUC.

    Replicates whose estimating equation or curve fails are dropped; more
    than 5% drops raises :class:`BootstrapError`. ``unit_multipliers`` forces
    every multiplier to 1 (each replicate then reproduces the point estimate).
    """
    if B < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} bootstrap replicates, got {B}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    u_values = list(u_values)
    plug_ins = [(cal.j, cal.density_ratio(d), cal.imputation(d)) for cal in beta_est.per_coordinate]
    init = beta_est.preliminary_beta

    def replicate(b: int) -> Optional[np.ndarray]:
        xi_s, xi_t = draw_multipliers(d, seed, b, unit_multipliers)
        try:
            beta_b = np.zeros(d.q)
            for j, h, r in plug_ins:
                beta_b[j] = solve_estimating_equation(d, h, r, xi_s, xi_t, init=init)[j]
            curve = roc_curve(d, beta_b, calibrated, eval_points, xi_s, xi_t)
        except TransferError:
            return None
        return np.concatenate([beta_b, [curve.auc], np.atleast_1d(roc_at(curve, u_values))])

    draws = parallel_map(replicate, range(B), threads)
    kept = [row for row in draws if row is not None]
    dropped = B - len(kept)
    if dropped > MAX_DROP_FRACTION * B:
        raise BootstrapError(f"{dropped} of {B} bootstrap replicates failed (limit {MAX_DROP_FRACTION:.0%})")
    matrix = np.vstack(kept)

    targets = [beta_target(j) for j in range(d.q)] + ["auc"] + [roc_target(u) for u in u_values]
    points = np.concatenate([beta_est.beta, [roc_point.auc], np.atleast_1d(roc_at(roc_point, u_values))])
    results: List[BootstrapResult] = []
    replicates: Dict[str, np.ndarray] = {}
    for k, target in enumerate(targets):
        replicates[target] = matrix[:, k]
        results.extend(intervals(target, points[k], matrix[:, k], level))
    return BootstrapReport(results=results, requested=B, dropped=dropped, replicates=replicates, seed=seed)


# --------------------------------------------------------------------------- #
# Influence values
# --------------------------------------------------------------------------- #
def influence_values_beta(d: Dataset, j: int, beta_est: BetaEstimate) -> Tuple[np.ndarray, np.ndarray]:
    """Plug-in influence terms of coordinate ``j`` on source and target rows."""
    cal = next(c for c in beta_est.per_coordinate if c.j == j)
    e_j = np.zeros(d.q)
    e_j[j] = 1.0
    v = linalg.solve(beta_est.info_matrix, e_j, assume_a="sym")
    h = cal.density_ratio(d)
    r = cal.imputation(d)
    w_s = d.source_a @ v
    w_t = d.target_a @ v
    psi_s = w_s * h * (d.source_y - r[: d.n])
    psi_t = w_t * (r[d.n:] - g(d.target_a @ beta_est.beta))
    return psi_s, psi_t


def sandwich_se(d: Dataset, j: int, beta_est: BetaEstimate) -> float:
    """``sqrt(var_S / n + var_T / N)`` of the influence values of coordinate ``j``."""
    psi_s, psi_t = influence_values_beta(d, j, beta_est)
    return float(np.sqrt(np.var(psi_s, ddof=1) / d.n + np.var(psi_t, ddof=1) / d.N))
