"""Doubly robust ROC/AUC on the target population.

Cutoffs are calibrated only at ``m`` data-driven quantiles of the source
scores ``A'beta``; every other cutoff ``c`` borrows the nuisances of its
nearest calibrated quantile ``t(c)``. True/false positive mass at ``c`` is

    TP(c) = 1/n sum_S I(s_i >= c) e^{x'a} (Y - g(x'r)) + 1/N sum_T I(s_i >= c) g(x'r)
    FP(c) = 1/n sum_S I(s_i >= c) e^{x'a} (g(x'r) - Y) + 1/N sum_T I(s_i >= c) (1 - g(x'r))

and TPR/FPR divide by the same sums at ``c = -inf`` (smallest cutoff's
nuisances). Raw ratios are kept for audit; the published curve is clamped to
``[0, 1]`` and made non-increasing in ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .beta import alpha_calibration_problem, gamma_calibration_problem
from .data import Dataset
from .errors import CalibrationError, DegeneratePrevalenceError
from .links import g
from .penalized import NuisanceFit, SolverOptions, solve_penalized

MIN_EFFECTIVE = 20
PREVALENCE_FLOOR = 1e-6
DEFAULT_U = (0.1, 0.2)


# --------------------------------------------------------------------------- #
# Quantile grid
# --------------------------------------------------------------------------- #
@dataclass
class CutoffGrid:
    """Calibration cutoffs in ascending order (``cutoffs[0]`` is the smallest, rank ``n``)."""

    cutoffs: np.ndarray
    ranks: np.ndarray
    n_min: int
    m: int
    collapsed: int = 0


def default_n_min(n: int, p: int) -> int:
    """``round(sqrt(n) * log(n p)^(1/3))`` clamped to ``[20, n]``."""
    value = round(math.sqrt(n) * math.log(max(n * max(p, 1), 2)) ** (1.0 / 3.0))
    return int(min(max(value, min(MIN_EFFECTIVE, n)), n))


def quantile_grid(d: Dataset, beta: np.ndarray, n_min: int) -> CutoffGrid:
    """Split the descending source scores into segments of ``n_min``.

    ``m = ceil(n / n_min)``; the cutoffs sit at ranks ``n, (m-1) n_min, ...,
    n_min``. Tied scores that produce equal cutoffs collapse to one entry. The
    20-row floor on a calibration is enforced where the cutoffs are calibrated.
    """
    n = d.n
    if not 1 <= n_min <= n:
        raise ValueError(f"n_min must lie in [1, n={n}], got {n_min}")
    scores = np.sort(d.source_a @ beta)[::-1]
    m = math.ceil(n / n_min)
    ranks = np.array([n] + [(m - j + 1) * n_min for j in range(2, m + 1)], dtype=int)
    cutoffs = scores[ranks - 1]
    keep = np.concatenate([[True], np.diff(cutoffs) > 0])
    return CutoffGrid(cutoffs=cutoffs[keep], ranks=ranks[keep], n_min=n_min, m=m,
                      collapsed=int(m - np.count_nonzero(keep)))


def nearest_cutoff_index(cutoffs: np.ndarray, c: Union[float, np.ndarray]) -> np.ndarray:
    """Index of ``t(c)``, the nearest calibrated cutoff; midpoint ties go to the lower one."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    upper = np.clip(np.searchsorted(cutoffs, c, side="left"), 0, cutoffs.size - 1)
    lower = np.clip(upper - 1, 0, cutoffs.size - 1)
    take_lower = np.abs(c - cutoffs[lower]) <= np.abs(cutoffs[upper] - c)
    return np.where(take_lower, lower, upper)


# --------------------------------------------------------------------------- #
# Cutoff calibration
# --------------------------------------------------------------------------- #
@dataclass
class CutoffCalibration:
    c: float
    alpha: NuisanceFit
    gamma: NuisanceFit
    effective: int = 0

    def contributions(self, d: Dataset, source_weights: Optional[np.ndarray] = None,
                      target_weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Per-row TP and FP terms in pooled order (already divided by n or N)."""
        return dr_contributions(d, self.alpha.coef, self.gamma.coef, source_weights, target_weights)

    def to_dict(self) -> Dict[str, Any]:
        return {"c": float(self.c), "effective_source": self.effective,
                "alpha": self.alpha.to_dict(), "gamma": self.gamma.to_dict()}


@dataclass
class CalibratedGrid:
    grid: CutoffGrid
    calibrations: List[CutoffCalibration]

    @property
    def cutoffs(self) -> np.ndarray:
        return self.grid.cutoffs


def roc_lambda(kappa: float, n_j: int, n: int, p: int) -> float:
    return kappa * (n_j / n) * math.sqrt(math.log(max(n * max(p, 1), 2)) / n_j)


def calibrate_roc_cutoff(d: Dataset, c: float, alpha: NuisanceFit, gamma: NuisanceFit,
                         beta: np.ndarray, lam_alpha: float, lam_gamma: float,
                         options: SolverOptions = SolverOptions()) -> CutoffCalibration:
    """Re-fit both nuisances with indicator weights ``I(A'beta >= c)``.

    Raises :class:`CalibrationError` when fewer than 20 source rows clear ``c``.
    """
    indicator = (d.pooled_a @ beta >= c).astype(float)
    effective = int(indicator[: d.n].sum())
    if effective < MIN_EFFECTIVE:
        raise CalibrationError(f"cutoff {c:.4g}: only {effective} source rows at or above it")
    a_fit = solve_penalized(alpha_calibration_problem(d, alpha, gamma, indicator, lam_alpha),
                            tol=options.tol, max_iter=options.max_iter, backend=options.backend)
    g_fit = solve_penalized(gamma_calibration_problem(d, alpha, gamma, indicator[: d.n], lam_gamma),
                            tol=options.tol, max_iter=options.max_iter, backend=options.backend)
    return CutoffCalibration(c=float(c), alpha=a_fit, gamma=g_fit, effective=effective)


def calibrate_grid(d: Dataset, beta: np.ndarray, alpha: NuisanceFit, gamma: NuisanceFit,
                   grid: CutoffGrid, kappa: float = 1.0, options: SolverOptions = SolverOptions(),
                   mapper: Callable[[Callable, Iterable], List] = None) -> CalibratedGrid:
    """Calibrate every grid cutoff; ``mapper`` (default: serial) may run them in parallel."""

    def one(k: int) -> CutoffCalibration:
        lam = roc_lambda(kappa, int(grid.ranks[k]), d.n, d.p)
        return calibrate_roc_cutoff(d, grid.cutoffs[k], alpha, gamma, beta, lam, lam, options)

    run = mapper or (lambda fn, items: [fn(item) for item in items])
    return CalibratedGrid(grid=grid, calibrations=list(run(one, range(grid.cutoffs.size))))


def oracle_calibrations(cutoffs: Sequence[float], alpha_coef: np.ndarray, gamma_coef: np.ndarray,
                        n_min: int = MIN_EFFECTIVE) -> CalibratedGrid:
    """A grid whose every cutoff uses the same known nuisance vectors."""
    cutoffs = np.sort(np.asarray(cutoffs, dtype=float))
    grid = CutoffGrid(cutoffs=cutoffs, ranks=np.zeros(cutoffs.size, dtype=int), n_min=n_min, m=cutoffs.size)
    a_fit = NuisanceFit.fixed(alpha_coef, "exp_linear")
    g_fit = NuisanceFit.fixed(gamma_coef, "logistic")
    return CalibratedGrid(grid, [CutoffCalibration(float(c), a_fit, g_fit) for c in cutoffs])


# --------------------------------------------------------------------------- #
# TP / FP sums
# --------------------------------------------------------------------------- #
def dr_contributions(d: Dataset, alpha_coef: np.ndarray, gamma_coef: np.ndarray,
                     source_weights: Optional[np.ndarray] = None,
                     target_weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    xi_s = np.ones(d.n) if source_weights is None else source_weights
    xi_t = np.ones(d.N) if target_weights is None else target_weights
    h = np.exp(d.source_x @ alpha_coef)
    r_s = g(d.source_x @ gamma_coef)
    r_t = g(d.target_x @ gamma_coef)
    resid = xi_s * h * (d.source_y - r_s) / d.n
    tp = np.concatenate([resid, xi_t * r_t / d.N])
    fp = np.concatenate([-resid, xi_t * (1.0 - r_t) / d.N])
    return tp, fp


def tail_sums(scores: np.ndarray, contrib: np.ndarray, cs: np.ndarray) -> np.ndarray:
    """``sum_i contrib_i * I(scores_i >= c)`` for every ``c`` in ``cs``."""
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    suffix = np.concatenate([np.cumsum(contrib[order][::-1])[::-1], [0.0]])
    return suffix[np.searchsorted(sorted_scores, cs, side="left")]


def tp_fp(d: Dataset, c: float, beta: np.ndarray, alpha: np.ndarray, gamma: np.ndarray,
          source_weights: Optional[np.ndarray] = None,
          target_weights: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """Raw (unclamped) TP and FP mass at ``c`` for fixed nuisance vectors."""
    tp, fp = dr_contributions(d, alpha, gamma, source_weights, target_weights)
    mask = d.pooled_a @ beta >= c
    return float(tp[mask].sum()), float(fp[mask].sum())


def dr_tail_sums(d: Dataset, beta: np.ndarray, calibrated: CalibratedGrid, cs: np.ndarray,
                 source_weights: Optional[np.ndarray] = None,
                 target_weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """TP(c), FP(c) with nearest-cutoff nuisances, plus the ``c = -inf`` denominators."""
    cs = np.asarray(cs, dtype=float)
    scores = d.pooled_a @ beta
    assign = nearest_cutoff_index(calibrated.cutoffs, cs)
    TP = np.zeros(cs.size)
    FP = np.zeros(cs.size)
    tp0 = fp0 = 0.0
    for k, cal in enumerate(calibrated.calibrations):
        tp, fp = cal.contributions(d, source_weights, target_weights)
        if k == 0:
            tp0, fp0 = float(tp.sum()), float(fp.sum())
        rows = assign == k
        if np.any(rows):
            TP[rows] = tail_sums(scores, tp, cs[rows])
            FP[rows] = tail_sums(scores, fp, cs[rows])
    return TP, FP, tp0, fp0


def check_prevalence(tp0: float, fp0: float) -> None:
    if tp0 <= PREVALENCE_FLOOR or fp0 <= PREVALENCE_FLOOR:
        raise DegeneratePrevalenceError(
            f"degenerate prevalence: TP(-inf)={tp0:.3g}, FP(-inf)={fp0:.3g}"
        )


def tpr_fpr(d: Dataset, c: float, beta: np.ndarray, calibrated: CalibratedGrid) -> Tuple[float, float]:
    """Clamped TPR and FPR at a single cutoff."""
    TP, FP, tp0, fp0 = dr_tail_sums(d, beta, calibrated, np.array([c]))
    check_prevalence(tp0, fp0)
    return float(np.clip(TP[0] / tp0, 0.0, 1.0)), float(np.clip(FP[0] / fp0, 0.0, 1.0))


# --------------------------------------------------------------------------- #
# Curves
# --------------------------------------------------------------------------- #
@dataclass
class RocEstimate:
    """A post-processed ROC curve over cutoffs ``c`` (ascending)."""

    c: np.ndarray
    fpr_raw: np.ndarray
    tpr_raw: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    prevalence: float = float("nan")
    grid: Optional[CutoffGrid] = None
    calibrations: List[CutoffCalibration] = field(default_factory=list, repr=False)
    method: str = "dr"

    @property
    def n_min(self) -> Optional[int]:
        return self.grid.n_min if self.grid else None

    def roc_at(self, u: Union[float, Sequence[float]]):
        return roc_at(self, u)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"c": self.c, "fpr_raw": self.fpr_raw, "tpr_raw": self.tpr_raw,
                             "fpr": self.fpr, "tpr": self.tpr})

    def summary(self, u_values: Sequence[float] = DEFAULT_U) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "method": self.method,
            "auc": float(self.auc),
            "roc_at": {format_u(u): float(v) for u, v in zip(u_values, np.atleast_1d(self.roc_at(list(u_values))))},
            "prevalence": float(self.prevalence),
            "eval_points": int(self.c.size),
        }
        if self.grid is not None:
            out.update({
                "m": int(self.grid.m),
                "n_min": int(self.grid.n_min),
                "collapsed_cutoffs": int(self.grid.collapsed),
                "cutoffs": [float(c) for c in self.grid.cutoffs],
                "calibrations": [cal.to_dict() for cal in self.calibrations],
            })
        return out


def format_u(u: float) -> str:
    return f"{float(u):g}"


def monotone_clamp(values: np.ndarray) -> np.ndarray:
    """Clamp to ``[0, 1]``, then enforce non-increasing order along ascending ``c``."""
    clamped = np.clip(values, 0.0, 1.0)
    return np.maximum.accumulate(clamped[::-1])[::-1]


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    """Area under ``(fpr, tpr)`` listed by ascending ``c``, closed with (0,0) and (1,1)."""
    f = np.concatenate([[0.0], fpr[::-1], [1.0]])
    t = np.concatenate([[0.0], tpr[::-1], [1.0]])
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))


def curve_from_sums(c: np.ndarray, TP: np.ndarray, FP: np.ndarray, tp0: float, fp0: float,
                    method: str = "dr") -> RocEstimate:
    check_prevalence(tp0, fp0)
    tpr_raw = TP / tp0
    fpr_raw = FP / fp0
    tpr = monotone_clamp(tpr_raw)
    fpr = monotone_clamp(fpr_raw)
    return RocEstimate(c=c, fpr_raw=fpr_raw, tpr_raw=tpr_raw, fpr=fpr, tpr=tpr,
                       auc=trapezoid_auc(fpr, tpr), prevalence=tp0, method=method)


def evaluation_cutoffs(scores: np.ndarray, eval_points: Optional[int] = None) -> np.ndarray:
    """Unique scores, optionally thinned to ``eval_points`` evenly spaced ranks (ends kept)."""
    c = np.unique(scores)
    if eval_points is not None and 2 <= eval_points < c.size:
        c = c[np.unique(np.round(np.linspace(0, c.size - 1, eval_points)).astype(int))]
    return c


def roc_curve(d: Dataset, beta: np.ndarray, calibrated: CalibratedGrid,
              eval_points: Optional[int] = None,
              source_weights: Optional[np.ndarray] = None,
              target_weights: Optional[np.ndarray] = None) -> RocEstimate:
    """Evaluate the doubly robust curve over the pooled score values."""
    c = evaluation_cutoffs(d.pooled_a @ beta, eval_points)
    TP, FP, tp0, fp0 = dr_tail_sums(d, beta, calibrated, c, source_weights, target_weights)
    est = curve_from_sums(c, TP, FP, tp0, fp0)
    est.grid = calibrated.grid
    est.calibrations = calibrated.calibrations
    return est


def step_roc(fpr: np.ndarray, tpr: np.ndarray, u: Union[float, Sequence[float]]):
    """``TPR(c_u)`` with ``c_u = inf{c : FPR(c) <= u}`` on a non-increasing curve."""
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    ascending = fpr[::-1]
    below = np.searchsorted(ascending, u_arr, side="right")
    first = fpr.size - below
    values = np.where(first < fpr.size, tpr[np.minimum(first, fpr.size - 1)], 0.0)
    values = np.where(u_arr >= 1.0, 1.0, values)
    return float(values[0]) if np.ndim(u) == 0 else values


def roc_at(estimate: RocEstimate, u: Union[float, Sequence[float]]):
    return step_roc(estimate.fpr, estimate.tpr, u)


def tv_distance(a: RocEstimate, b: RocEstimate, grid: Optional[np.ndarray] = None) -> float:
    """``sup_u |ROC_a(u) - ROC_b(u)|`` over a u-grid (default: 1001 points on [0, 1])."""
    grid = np.linspace(0.0, 1.0, 1001) if grid is None else np.asarray(grid, dtype=float)
    return float(np.max(np.abs(roc_at(a, grid) - roc_at(b, grid))))
