"""Single-model comparators and prediction-agreement metrics.

* ``iw``: importance weighting. β solves ``(1/n) sum_S h A (Y - g(A'beta)) = 0``
  and TP/FP are density-ratio-weighted source sums.
* ``im``: imputation. β solves ``(1/N) sum_T A (r - g(A'beta)) = 0`` and
  TP/FP are imputed target sums.
* ``source``: no adjustment at all; fit and evaluate on the source rows.

All three share the clamping and monotone post-processing of the doubly
robust curve.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from estimation.beta import solve_logistic_score
from estimation.data import Dataset, require_label_variation
from estimation.links import g
from estimation.penalized import NuisanceFit
from estimation.roc import RocEstimate, curve_from_sums, evaluation_cutoffs, tail_sums


def _curve(d: Dataset, beta: np.ndarray, tp: np.ndarray, fp: np.ndarray,
           eval_points: Optional[int], method: str) -> RocEstimate:
    """Curve from pooled-order per-row TP/FP terms."""
    scores = d.pooled_a @ beta
    c = evaluation_cutoffs(scores, eval_points)
    TP = tail_sums(scores, tp, c)
    FP = tail_sums(scores, fp, c)
    return curve_from_sums(c, TP, FP, float(tp.sum()), float(fp.sum()), method=method)


def run_baseline_iw(d: Dataset, alpha: NuisanceFit,
                    eval_points: Optional[int] = None) -> Tuple[np.ndarray, RocEstimate]:
    require_label_variation(d)
    h = np.exp(d.source_x @ alpha.coef)
    A = d.source_a
    beta = solve_logistic_score(A, A.T @ (h * d.source_y) / d.n, h / d.n)
    zeros = np.zeros(d.N)
    tp = np.concatenate([h * d.source_y / d.n, zeros])
    fp = np.concatenate([h * (1.0 - d.source_y) / d.n, zeros])
    return beta, _curve(d, beta, tp, fp, eval_points, "iw")


def run_baseline_im(d: Dataset, gamma: NuisanceFit,
                    eval_points: Optional[int] = None) -> Tuple[np.ndarray, RocEstimate]:
    r = g(d.target_x @ gamma.coef)
    A = d.target_a
    beta = solve_logistic_score(A, A.T @ r / d.N, np.full(d.N, 1.0 / d.N))
    zeros = np.zeros(d.n)
    tp = np.concatenate([zeros, r / d.N])
    fp = np.concatenate([zeros, (1.0 - r) / d.N])
    return beta, _curve(d, beta, tp, fp, eval_points, "im")


def run_baseline_source(d: Dataset, eval_points: Optional[int] = None) -> Tuple[np.ndarray, RocEstimate]:
    require_label_variation(d)
    A = d.source_a
    beta = solve_logistic_score(A, A.T @ d.source_y / d.n, np.full(d.n, 1.0 / d.n))
    zeros = np.zeros(d.N)
    tp = np.concatenate([d.source_y / d.n, zeros])
    fp = np.concatenate([(1.0 - d.source_y) / d.n, zeros])
    return beta, _curve(d, beta, tp, fp, eval_points, "source")


def prediction_agreement(d: Dataset, beta_ref: np.ndarray, beta: np.ndarray) -> Dict[str, float]:
    """Compare two risk models on the target rows.

    ``rmspe`` is the root mean squared difference of predicted risks,
    ``classifier_correlation`` the Pearson correlation of the two classifiers
    that flag a row when its risk reaches the model's own target mean, and
    ``false_classification_rate`` the share of rows the classifiers disagree on.
    """
    ref = g(d.target_a @ beta_ref)
    other = g(d.target_a @ beta)
    flag_ref = (ref >= ref.mean()).astype(float)
    flag_other = (other >= other.mean()).astype(float)
    if flag_ref.std() == 0 or flag_other.std() == 0:
        corr = float("nan")
    else:
        corr = float(np.corrcoef(flag_ref, flag_other)[0, 1])
    return {
        "rmspe": float(np.sqrt(np.mean((ref - other) ** 2))),
        "classifier_correlation": corr,
        "false_classification_rate": float(np.mean(flag_ref != flag_other)),
    }
