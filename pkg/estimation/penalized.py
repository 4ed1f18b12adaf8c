"""ℓ1-penalized nuisance problems, their KKT certificates and λ tuning.

Two loss families are supported, both averaged over the problem's rows and
both evaluated at ``eta = design @ (offset + delta)``:

``logistic``
    ``w_i * (G(eta_i) - y_i * eta_i)`` with ``G(a) = log(1 + e^a)``.
``exp_linear``
    ``w_i * (pos_i * exp(eta_i) - neg_i * eta_i)``; ``pos`` and ``neg`` are
    the two role weights (source rows carry ``pos``, target rows ``neg``).

Only ``delta`` is penalized, so an offset fit ``(alpha~, gamma~)`` can be
re-calibrated around itself. Coordinates whose ``penalty_mask`` entry is
False (by default the intercept) are free.

The numeric work is delegated to a backend from :mod:`solvers`; this module
owns the problem definition, the objective, and the KKT residual used to
certify every returned fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import KFold

from .errors import DegenerateFoldError, SolverDivergence, SolverError
from .links import G, g, g_dot, safe_exp

LOSS_KINDS = ("logistic", "exp_linear")

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10000


@dataclass(frozen=True)
class PenalizedProblem:
    """One weighted, offset ℓ1-penalized convex problem.

    ``responses`` is a label vector for ``logistic`` and a ``(rows, 2)``
    array of ``(pos, neg)`` role weights for ``exp_linear``.
    """

    loss_kind: str
    design: np.ndarray
    responses: np.ndarray
    sample_weights: np.ndarray
    offset: np.ndarray
    penalty_mask: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        design = np.asarray(self.design, dtype=float)
        if design.ndim != 2:
            raise ValueError("design must be a 2-D matrix")
        rows, width = design.shape
        responses = np.asarray(self.responses, dtype=float)
        expected = (rows,) if self.loss_kind == "logistic" else (rows, 2)
        if responses.shape != expected:
            raise ValueError(f"responses shape {responses.shape} != {expected}")
        weights = np.asarray(self.sample_weights, dtype=float)
        if weights.shape != (rows,):
            raise ValueError("sample_weights must have one entry per row")
        if np.any(weights < 0) or not np.any(weights > 0):
            raise ValueError("sample_weights must be nonnegative and not all zero")
        offset = np.asarray(self.offset, dtype=float)
        if offset.shape != (width,):
            raise ValueError(f"offset length {offset.shape} != feature count {width}")
        mask = np.asarray(self.penalty_mask, dtype=bool)
        if mask.shape != (width,):
            raise ValueError("penalty_mask must have one entry per feature")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        for name, value in (("design", design), ("responses", responses),
                            ("sample_weights", weights), ("offset", offset), ("penalty_mask", mask)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "lam", float(self.lam))

    @classmethod
    def logistic(cls, design, labels, sample_weights=None, offset=None,
                 penalty_mask=None, lam: float = 0.0) -> "PenalizedProblem":
        design = np.asarray(design, dtype=float)
        rows, width = design.shape
        return cls(
            "logistic", design, labels,
            np.ones(rows) if sample_weights is None else sample_weights,
            np.zeros(width) if offset is None else offset,
            default_penalty_mask(width) if penalty_mask is None else penalty_mask,
            lam,
        )

    @classmethod
    def exp_linear(cls, design, pos, neg, sample_weights=None, offset=None,
                   penalty_mask=None, lam: float = 0.0) -> "PenalizedProblem":
        design = np.asarray(design, dtype=float)
        rows, width = design.shape
        return cls(
            "exp_linear", design, np.column_stack([pos, neg]),
            np.ones(rows) if sample_weights is None else sample_weights,
            np.zeros(width) if offset is None else offset,
            default_penalty_mask(width) if penalty_mask is None else penalty_mask,
            lam,
        )

    @property
    def rows(self) -> int:
        return self.design.shape[0]

    @property
    def width(self) -> int:
        return self.design.shape[1]

    def with_lambda(self, lam: float) -> "PenalizedProblem":
        return replace(self, lam=lam)

    def subset(self, rows: np.ndarray) -> "PenalizedProblem":
        """Restrict to ``rows``; the loss stays a mean over the kept rows."""
        return replace(self, design=self.design[rows], responses=self.responses[rows],
                       sample_weights=self.sample_weights[rows])

    def delta_of(self, coef: np.ndarray) -> np.ndarray:
        return np.asarray(coef, dtype=float) - self.offset


@dataclass
class NuisanceFit:
    """A certified solution of a :class:`PenalizedProblem`."""

    coef: np.ndarray
    delta: np.ndarray
    lam: float
    kkt_residual: float
    objective: float
    iterations: int
    loss_kind: str = "logistic"
    backend: str = "proximal"
    converged: bool = True
    history: List[float] = field(default_factory=list, repr=False)

    @classmethod
    def fixed(cls, coef, loss_kind: str = "logistic") -> "NuisanceFit":
        """Wrap a known coefficient vector (oracle or plug-in) as a fit."""
        coef = np.asarray(coef, dtype=float)
        return cls(coef=coef, delta=np.zeros_like(coef), lam=0.0, kkt_residual=0.0,
                   objective=float("nan"), iterations=0, loss_kind=loss_kind, backend="fixed")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "loss_kind": self.loss_kind,
            "lambda": self.lam,
            "kkt_residual": self.kkt_residual,
            "objective": self.objective,
            "iterations": self.iterations,
            "backend": self.backend,
            "converged": self.converged,
            "nonzero": int(np.count_nonzero(self.delta)),
        }


@dataclass(frozen=True)
class SolverOptions:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    backend: str = "proximal"


def default_penalty_mask(width: int) -> np.ndarray:
    mask = np.ones(width, dtype=bool)
    mask[0] = False
    return mask


# --------------------------------------------------------------------------- #
# Loss evaluation (shared with the solver backends)
# --------------------------------------------------------------------------- #
def _exp(eta: np.ndarray, clip: bool) -> np.ndarray:
    if clip:
        return safe_exp(eta)
    with np.errstate(over="ignore"):
        return np.exp(eta)


def row_losses(prob: PenalizedProblem, eta: np.ndarray, clip: bool = False) -> np.ndarray:
    w = prob.sample_weights
    if prob.loss_kind == "logistic":
        return w * (G(eta) - prob.responses * eta)
    pos, neg = prob.responses[:, 0], prob.responses[:, 1]
    with np.errstate(invalid="ignore"):
        exp_part = np.where(pos > 0, pos * _exp(eta, clip), 0.0)
    return w * (exp_part - neg * eta)


def row_derivatives(prob: PenalizedProblem, eta: np.ndarray, clip: bool = False) -> np.ndarray:
    """d loss_i / d eta_i."""
    w = prob.sample_weights
    if prob.loss_kind == "logistic":
        return w * (g(eta) - prob.responses)
    pos, neg = prob.responses[:, 0], prob.responses[:, 1]
    with np.errstate(invalid="ignore"):
        exp_part = np.where(pos > 0, pos * _exp(eta, clip), 0.0)
    return w * (exp_part - neg)


def row_curvatures(prob: PenalizedProblem, eta: np.ndarray, clip: bool = True) -> np.ndarray:
    """d² loss_i / d eta_i²."""
    w = prob.sample_weights
    if prob.loss_kind == "logistic":
        return w * g_dot(eta)
    pos = prob.responses[:, 0]
    with np.errstate(invalid="ignore"):
        return w * np.where(pos > 0, pos * _exp(eta, clip), 0.0)


def exp_role_overflow(prob: PenalizedProblem, eta: np.ndarray, bound: float) -> bool:
    """True when a row with a positive exp role has ``eta`` above ``bound``."""
    if prob.loss_kind != "exp_linear":
        return False
    active = (prob.responses[:, 0] > 0) & (prob.sample_weights > 0)
    return bool(np.any(eta[active] > bound))


def linear_predictor(prob: PenalizedProblem, coef: np.ndarray) -> np.ndarray:
    return prob.design @ np.asarray(coef, dtype=float)


def loss_value(prob: PenalizedProblem, coef: np.ndarray, clip: bool = False) -> float:
    """Unpenalized mean loss at the full coefficient ``coef``."""
    return float(np.mean(row_losses(prob, linear_predictor(prob, coef), clip)))


def loss_gradient(prob: PenalizedProblem, coef: np.ndarray, clip: bool = False) -> np.ndarray:
    eta = linear_predictor(prob, coef)
    return prob.design.T @ row_derivatives(prob, eta, clip) / prob.rows


def penalty_value(prob: PenalizedProblem, coef: np.ndarray) -> float:
    delta = prob.delta_of(coef)
    return prob.lam * float(np.sum(np.abs(delta[prob.penalty_mask])))


def objective(prob: PenalizedProblem, coef: np.ndarray) -> float:
    return loss_value(prob, coef) + penalty_value(prob, coef)


def moment_terms(prob: PenalizedProblem, coef: np.ndarray) -> np.ndarray:
    """The weighted moment vector whose sup-norm the fit's λ bounds (= the loss gradient)."""
    return loss_gradient(prob, coef)


def kkt_violations(prob: PenalizedProblem, coef: np.ndarray, grad: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-coordinate subgradient violation at ``coef`` (unclipped gradient)."""
    if grad is None:
        grad = loss_gradient(prob, coef)
    delta = prob.delta_of(coef)
    lam = prob.lam
    out = np.abs(grad)
    penalized = prob.penalty_mask
    at_zero = penalized & (delta == 0.0)
    moved = penalized & (delta != 0.0)
    out[at_zero] = np.maximum(np.abs(grad[at_zero]) - lam, 0.0)
    out[moved] = np.abs(grad[moved] + np.sign(delta[moved]) * lam)
    return out


def kkt_residual(prob: PenalizedProblem, coef: np.ndarray) -> float:
    """Max subgradient violation at the full coefficient ``coef``; 0 is exact stationarity."""
    viol = kkt_violations(prob, coef)
    if not np.all(np.isfinite(viol)):
        return float("inf")
    return float(viol.max()) if viol.size else 0.0


def soft_threshold(v: np.ndarray, thresh: float, mask: np.ndarray) -> np.ndarray:
    """Proximal map of ``thresh * ||v[mask]||_1``."""
    out = np.array(v, dtype=float)
    out[mask] = np.sign(out[mask]) * np.maximum(np.abs(out[mask]) - thresh, 0.0)
    return out


# --------------------------------------------------------------------------- #
# Solving
# --------------------------------------------------------------------------- #
def solve_penalized(prob: PenalizedProblem, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER, backend: str = "proximal",
                    init: Optional[np.ndarray] = None) -> NuisanceFit:
    """Minimize ``prob``'s penalized objective and certify it by KKT residual.

    ``init`` is a warm-start ``delta``; it is ignored when it is worse than
    the offset-only point. Raises :class:`SolverError` carrying the last
    iterate when the residual stays above ``tol`` after ``max_iter``
    iterations, and :class:`SolverDivergence` when the objective is unbounded.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    from solvers import get_solver

    solver = get_solver(backend)
    start = np.zeros(prob.width)
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape == start.shape and np.all(np.isfinite(init)):
            if objective(prob, prob.offset + init) <= objective(prob, prob.offset):
                start = init

    result = solver.solve(prob, start, tol=tol, max_iter=max_iter)
    coef = prob.offset + result.delta
    residual = kkt_residual(prob, coef)
    if not result.converged or residual > tol:
        raise SolverError(
            f"{prob.loss_kind} fit did not reach KKT tolerance {tol:g} in "
            f"{result.iterations} iterations (residual {residual:.3g})",
            coef=coef, residual=residual,
        )
    return NuisanceFit(
        coef=coef,
        delta=result.delta,
        lam=prob.lam,
        kkt_residual=residual,
        objective=objective(prob, coef),
        iterations=result.iterations,
        loss_kind=prob.loss_kind,
        backend=solver.name,
        converged=True,
        history=list(result.history),
    )


# --------------------------------------------------------------------------- #
# Tuning
# --------------------------------------------------------------------------- #
def lambda_grid(p: int, n: int, size: int = 20, lo: float = 0.01, hi: float = 0.5) -> np.ndarray:
    """Ascending log-spaced grid over ``[lo, hi] * sqrt(log p / n)``."""
    if size < 1 or n < 1:
        raise ValueError("grid size and n must be positive")
    if not 0 < lo <= hi:
        raise ValueError(f"need 0 < lo <= hi, got lo={lo}, hi={hi}")
    base = math.sqrt(math.log(max(p, 2)) / n)
    if size == 1:
        return np.array([hi * base])
    return np.geomspace(lo * base, hi * base, size)


def _degenerate(prob: PenalizedProblem, rows: np.ndarray) -> bool:
    live = rows[prob.sample_weights[rows] > 0]
    if live.size == 0:
        return True
    if prob.loss_kind == "logistic":
        labels = prob.responses[live]
        return bool(np.all(labels == labels[0]))
    roles = prob.responses[live]
    return not (np.any(roles[:, 0] > 0) and np.any(roles[:, 1] > 0))


def _fold_splits(prob: PenalizedProblem, folds: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    for attempt in range(2):
        splitter = KFold(n_splits=folds, shuffle=True, random_state=seed + attempt)
        splits = list(splitter.split(np.arange(prob.rows)))
        if not any(_degenerate(prob, train) or _degenerate(prob, held) for train, held in splits):
            return splits
    raise DegenerateFoldError(
        f"{prob.loss_kind} cross-validation: a fold has degenerate responses after one re-draw"
    )


def cv_scores(template: PenalizedProblem, grid: Sequence[float], folds: int = 5, seed: int = 0,
              options: SolverOptions = SolverOptions()) -> np.ndarray:
    """Mean held-out unpenalized loss for each λ in ``grid``.

    A λ whose fit fails on any fold scores ``inf``.
    """
    grid = np.asarray(grid, dtype=float)
    scores = np.zeros(grid.size)
    for train, held in _fold_splits(template, folds, seed):
        train_prob = template.subset(train)
        held_prob = template.subset(held)
        warm: Optional[np.ndarray] = None
        # Large-to-small λ so each fit warm-starts from a sparser one.
        for k in range(grid.size - 1, -1, -1):
            if not np.isfinite(scores[k]):
                continue
            try:
                fit = solve_penalized(train_prob.with_lambda(grid[k]), tol=options.tol,
                                      max_iter=options.max_iter, backend=options.backend, init=warm)
            except SolverError:
                scores[k] = np.inf
                continue
            warm = fit.delta
            scores[k] += loss_value(held_prob, fit.coef) / folds
    return scores


def cross_validate_lambda(template: PenalizedProblem, grid: Sequence[float], folds: int = 5,
                          seed: int = 0, options: SolverOptions = SolverOptions()) -> float:
    """Pick the grid λ with the smallest mean held-out loss; ties go to the larger λ."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("lambda grid must be sorted ascending")
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    if grid.size == 1:
        return float(grid[0])
    scores = cv_scores(template, grid, folds=folds, seed=seed, options=options)
    if not np.any(np.isfinite(scores)):
        raise SolverDivergence(template.loss_kind)
    best = scores.min()
    tied = np.flatnonzero(scores <= best + 1e-12 * max(1.0, abs(best)))
    return float(grid[tied.max()])
