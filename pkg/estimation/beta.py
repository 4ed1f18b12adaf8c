"""Doubly robust estimation of the target-population risk model β.

Pipeline (one call per step, orchestrated by :mod:`orchestrator.pipeline`):

1. :func:`fit_preliminary_nuisances` – the density-ratio fit ``alpha~``
   (pooled exp-linear lasso) and the imputation fit ``gamma~`` (source
   logistic lasso).
2. :func:`preliminary_beta` – ``beta~`` from the augmented estimating
   equation with ``h = exp(x'alpha~)`` and ``r = g(x'gamma~)``.
3. :func:`calibrate_beta_coordinate` – for each coordinate ``j`` the
   calibration weights ``w_j = e_j' Sigma^{-1} A`` split the rows by sign and
   four penalized problems re-fit the nuisances around ``(alpha~, gamma~)``.
   A sign group that is too small switches the coordinate to
   :func:`calibrate_beta_unsplit`.
4. :func:`dr_beta` – the sign-matched nuisances are plugged in per
   coordinate and coordinate ``j`` of each solution is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .data import Dataset, population_constants
from .errors import (
    DegenerateSplitError,
    EstimatingEquationError,
    SingularMatrixError,
)
from .links import g, g_dot
from .penalized import (
    NuisanceFit,
    PenalizedProblem,
    SolverOptions,
    cv_scores,
    solve_penalized,
)

KAPPA_GRID = (0.25, 0.5, 1.0, 2.0)
MIN_SIGN_GROUP = 10
BETA_BOX = 20.0
RESIDUAL_TOL = 1e-9
MAX_NEWTON = 100
MAX_HALVINGS = 50
EIGEN_FLOOR = 1e-10


# --------------------------------------------------------------------------- #
# Preliminary nuisances
# --------------------------------------------------------------------------- #
def density_ratio_problem(d: Dataset, lam: float) -> PenalizedProblem:
    """Pooled exp-linear problem for ``alpha~`` (source role rho_n, target role rho_N)."""
    rho = population_constants(d)
    s = d.source_mask.astype(float)
    return PenalizedProblem.exp_linear(d.pooled_x, pos=rho.rho_n * s, neg=rho.rho_N * (1.0 - s), lam=lam)


def imputation_problem(d: Dataset, lam: float) -> PenalizedProblem:
    """Source-only logistic problem for ``gamma~``."""
    return PenalizedProblem.logistic(d.source_x, d.source_y, lam=lam)


def fit_preliminary_nuisances(d: Dataset, lam_alpha: float, lam_gamma: float,
                              options: SolverOptions = SolverOptions()) -> Tuple[NuisanceFit, NuisanceFit]:
    if not (lam_alpha > 0 and lam_gamma > 0):
        raise ValueError("preliminary penalties must be positive")
    alpha = solve_penalized(density_ratio_problem(d, lam_alpha), tol=options.tol,
                            max_iter=options.max_iter, backend=options.backend)
    gamma = solve_penalized(imputation_problem(d, lam_gamma), tol=options.tol,
                            max_iter=options.max_iter, backend=options.backend)
    return alpha, gamma


# --------------------------------------------------------------------------- #
# Estimating equation
# --------------------------------------------------------------------------- #
def solve_logistic_score(A: np.ndarray, const: np.ndarray, weights: np.ndarray,
                         init: Optional[np.ndarray] = None) -> np.ndarray:
    """Root of ``const - A' (weights * g(A beta)) = 0`` by damped Newton.

    The Jacobian is ``-A' diag(weights * g_dot) A``. Each Newton step is
    halved until the residual norm drops (at most 50 halvings). Raises
    :class:`EstimatingEquationError` when the iterate leaves the
    ``[-20, 20]^q`` box or stalls, :class:`SingularMatrixError` when the
    Jacobian is singular.
    """
    q = A.shape[1]
    beta = np.zeros(q) if init is None else np.array(init, dtype=float)

    def residual(b: np.ndarray) -> np.ndarray:
        return const - A.T @ (weights * g(A @ b))

    U = residual(beta)
    norm = float(np.linalg.norm(U))
    for _ in range(MAX_NEWTON):
        if np.max(np.abs(U)) <= RESIDUAL_TOL:
            return beta
        J = A.T @ ((weights * g_dot(A @ beta))[:, None] * A)
        try:
            step = linalg.solve(J, U, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularMatrixError(f"estimating-equation Jacobian is singular: {exc}") from exc
        t = 1.0
        for _ in range(MAX_HALVINGS):
            trial = beta + t * step
            U_trial = residual(trial)
            norm_trial = float(np.linalg.norm(U_trial))
            if np.isfinite(norm_trial) and norm_trial < norm:
                break
            t *= 0.5
        else:
            raise EstimatingEquationError(
                f"damped Newton stalled (residual {np.max(np.abs(U)):.3g})"
            )
        beta, U, norm = trial, U_trial, norm_trial
        if np.max(np.abs(beta)) > BETA_BOX:
            raise EstimatingEquationError(f"no root within [-{BETA_BOX:g}, {BETA_BOX:g}]^q")
    if np.max(np.abs(U)) <= RESIDUAL_TOL:
        return beta
    raise EstimatingEquationError(f"no convergence in {MAX_NEWTON} Newton steps")


def estimating_equation_residual(d: Dataset, beta: np.ndarray, h_vals: np.ndarray, r_vals: np.ndarray,
                                 source_weights: Optional[np.ndarray] = None,
                                 target_weights: Optional[np.ndarray] = None) -> np.ndarray:
    xi_s = np.ones(d.n) if source_weights is None else source_weights
    xi_t = np.ones(d.N) if target_weights is None else target_weights
    r_s, r_t = r_vals[: d.n], r_vals[d.n:]
    source = d.source_a.T @ (xi_s * h_vals * (d.source_y - r_s)) / d.n
    target = d.target_a.T @ (xi_t * (r_t - g(d.target_a @ beta))) / d.N
    return source + target


def solve_estimating_equation(d: Dataset, h_vals: np.ndarray, r_vals: np.ndarray,
                              source_weights: Optional[np.ndarray] = None,
                              target_weights: Optional[np.ndarray] = None,
                              init: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve the augmented equation for β.

    ``h_vals`` holds one density-ratio value per source row, ``r_vals`` one
    imputed probability per pooled row (source rows first). The optional
    weights multiply each row's term (bootstrap multipliers).
    """
    h_vals = np.asarray(h_vals, dtype=float)
    r_vals = np.asarray(r_vals, dtype=float)
    if h_vals.shape != (d.n,) or r_vals.shape != (d.n + d.N,):
        raise ValueError("h_vals needs one entry per source row and r_vals one per pooled row")
    if not (np.all(np.isfinite(h_vals)) and np.all(h_vals >= 0)):
        raise ValueError("h_vals must be finite and nonnegative")
    if not np.all((r_vals >= 0) & (r_vals <= 1)):
        raise ValueError("r_vals must lie in [0, 1]")
    xi_s = np.ones(d.n) if source_weights is None else np.asarray(source_weights, dtype=float)
    xi_t = np.ones(d.N) if target_weights is None else np.asarray(target_weights, dtype=float)

    r_s, r_t = r_vals[: d.n], r_vals[d.n:]
    const = d.source_a.T @ (xi_s * h_vals * (d.source_y - r_s)) / d.n
    const = const + d.target_a.T @ (xi_t * r_t) / d.N
    return solve_logistic_score(d.target_a, const, xi_t / d.N, init=init)


def information_matrix(d: Dataset, beta: np.ndarray, check: bool = True,
                       target_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """``(1/N) sum_target g_dot(A'beta) A A'``; non-PD raises when ``check``."""
    A = d.target_a
    w = g_dot(A @ beta)
    if target_weights is not None:
        w = w * target_weights
    sigma = A.T @ (w[:, None] * A) / d.N
    sigma = 0.5 * (sigma + sigma.T)
    if check:
        smallest = float(np.linalg.eigvalsh(sigma)[0])
        if smallest < EIGEN_FLOOR:
            raise SingularMatrixError(f"information matrix not positive definite (min eigenvalue {smallest:.3g})")
    return sigma


def calibration_weights(d: Dataset, sigma: np.ndarray) -> np.ndarray:
    """``w[i, j] = e_j' Sigma^{-1} A_i`` for every pooled row ``i``."""
    return linalg.solve(sigma, d.pooled_a.T, assume_a="pos").T


# --------------------------------------------------------------------------- #
# Calibration problems (shared with the ROC cutoff calibration)
# --------------------------------------------------------------------------- #
def alpha_calibration_problem(d: Dataset, alpha: NuisanceFit, gamma: NuisanceFit,
                              pooled_weights: np.ndarray, lam: float) -> PenalizedProblem:
    """Pooled exp-linear problem around ``alpha~`` with weights ``w_i * g_dot(x_i'gamma~)``."""
    rho = population_constants(d)
    s = d.source_mask.astype(float)
    X = d.pooled_x
    weights = np.asarray(pooled_weights, dtype=float) * g_dot(X @ gamma.coef)
    return PenalizedProblem.exp_linear(X, pos=rho.rho_n * s, neg=rho.rho_N * (1.0 - s),
                                       sample_weights=weights, offset=alpha.coef, lam=lam)


def gamma_calibration_problem(d: Dataset, alpha: NuisanceFit, gamma: NuisanceFit,
                              source_weights: np.ndarray, lam: float) -> PenalizedProblem:
    """Source logistic problem around ``gamma~`` with weights ``w_i * exp(x_i'alpha~)``."""
    X = d.source_x
    weights = np.asarray(source_weights, dtype=float) * np.exp(X @ alpha.coef)
    return PenalizedProblem.logistic(X, d.source_y, sample_weights=weights,
                                     offset=gamma.coef, lam=lam)


def group_lambda(kappa: float, p: int, count: float) -> float:
    return kappa * math.sqrt(math.log(max(p, 2)) / max(count, 1.0))


def effective_count(weights: np.ndarray) -> float:
    """``(sum |w|)^2 / sum w^2``: equals the row count for equal weights, 0 for an empty group."""
    a = np.abs(np.asarray(weights, dtype=float))
    square = float(a @ a)
    return float(a.sum()) ** 2 / square if square > 0 else 0.0


@dataclass
class CoordinateCalibration:
    """Calibrated nuisances for coordinate ``j`` (0-based).

    ``positive`` marks the pooled rows with ``w_j > 0``. In a fallback
    calibration the "+" and "-" fits are the same unsplit pair.
    """

    j: int
    alpha_plus: NuisanceFit
    alpha_minus: NuisanceFit
    gamma_plus: NuisanceFit
    gamma_minus: NuisanceFit
    positive: np.ndarray = field(repr=False)
    fallback: bool = False
    group_sizes: Dict[str, float] = field(default_factory=dict)

    def _choose(self, plus: np.ndarray, minus: np.ndarray, rows: slice) -> np.ndarray:
        return np.where(self.positive[rows], plus, minus)

    def density_ratio(self, d: Dataset) -> np.ndarray:
        """Sign-matched ``h(x_i)`` on source rows."""
        X = d.source_x
        rows = slice(0, d.n)
        return self._choose(np.exp(X @ self.alpha_plus.coef), np.exp(X @ self.alpha_minus.coef), rows)

    def imputation(self, d: Dataset) -> np.ndarray:
        """Sign-matched ``r(x_i)`` on pooled rows."""
        X = d.pooled_x
        return self._choose(g(X @ self.gamma_plus.coef), g(X @ self.gamma_minus.coef), slice(None))

    def fits(self) -> Dict[str, NuisanceFit]:
        return {"alpha_plus": self.alpha_plus, "alpha_minus": self.alpha_minus,
                "gamma_plus": self.gamma_plus, "gamma_minus": self.gamma_minus}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "j": self.j,
            "fallback": self.fallback,
            "group_sizes": dict(self.group_sizes),
            "fits": {name: fit.to_dict() for name, fit in self.fits().items()},
        }


def calibrate_beta_unsplit(d: Dataset, j: int, alpha: NuisanceFit, gamma: NuisanceFit,
                           w: np.ndarray, kappa: float = 1.0,
                           lam_alpha: Optional[float] = None, lam_gamma: Optional[float] = None,
                           options: SolverOptions = SolverOptions()) -> CoordinateCalibration:
    """One α and one γ calibration on all rows with weights ``|w_j|``."""
    weights = np.abs(w[:, j])
    lam_a = group_lambda(kappa, d.p, d.n) if lam_alpha is None else lam_alpha
    lam_g = group_lambda(kappa, d.p, d.n) if lam_gamma is None else lam_gamma
    a_fit = solve_penalized(alpha_calibration_problem(d, alpha, gamma, weights, lam_a),
                            tol=options.tol, max_iter=options.max_iter, backend=options.backend)
    g_fit = solve_penalized(gamma_calibration_problem(d, alpha, gamma, weights[: d.n], lam_g),
                            tol=options.tol, max_iter=options.max_iter, backend=options.backend)
    return CoordinateCalibration(j, a_fit, a_fit, g_fit, g_fit, positive=w[:, j] > 0, fallback=True,
                                 group_sizes={"all": d.n + d.N})


def calibrate_beta_coordinate(d: Dataset, j: int, alpha: NuisanceFit, gamma: NuisanceFit,
                              beta_tilde: np.ndarray, kappa: float = 1.0,
                              lambdas: Optional[Dict[str, float]] = None,
                              options: SolverOptions = SolverOptions(),
                              w: Optional[np.ndarray] = None) -> CoordinateCalibration:
    """Sign-split calibration of the nuisances for coordinate ``j`` (0-based).

    ``lambdas`` may fix any of ``alpha_plus``, ``alpha_minus``,
    ``gamma_plus``, ``gamma_minus``; the rest follow
    ``kappa * sqrt(log p / n_eff)`` with ``n_eff`` the group's
    :func:`effective_count` of source weights. Raises
    :class:`DegenerateSplitError` when either sign group has an effective
    count below 10 on the source or the target side.
    """
    if not np.all(np.isfinite(beta_tilde)):
        raise ValueError("beta~ must be finite")
    if w is None:
        w = calibration_weights(d, information_matrix(d, beta_tilde))
    lambdas = dict(lambdas or {})
    wj = w[:, j]
    positive = wj > 0
    source = d.source_mask

    fits: Dict[str, NuisanceFit] = {}
    sizes: Dict[str, float] = {}
    for sign, members in (("plus", positive), ("minus", ~positive)):
        sizes[f"{sign}_source"] = int(np.count_nonzero(members & source))
        sizes[f"{sign}_target"] = int(np.count_nonzero(members & ~source))
        eff_src = effective_count(wj[members & source])
        eff_tgt = effective_count(wj[members & ~source])
        sizes[f"{sign}_source_effective"] = round(eff_src, 3)
        sizes[f"{sign}_target_effective"] = round(eff_tgt, 3)
        if min(eff_src, eff_tgt) < MIN_SIGN_GROUP:
            raise DegenerateSplitError(
                f"degenerate sign split for coordinate {j + 1}: '{'+' if sign == 'plus' else '-'}' "
                f"group has {eff_src:.1f} source / {eff_tgt:.1f} target effective rows"
            )
        weights = np.where(members, np.abs(wj), 0.0)
        lam_default = group_lambda(kappa, d.p, eff_src)
        fits[f"alpha_{sign}"] = solve_penalized(
            alpha_calibration_problem(d, alpha, gamma, weights, lambdas.get(f"alpha_{sign}", lam_default)),
            tol=options.tol, max_iter=options.max_iter, backend=options.backend)
        fits[f"gamma_{sign}"] = solve_penalized(
            gamma_calibration_problem(d, alpha, gamma, weights[: d.n], lambdas.get(f"gamma_{sign}", lam_default)),
            tol=options.tol, max_iter=options.max_iter, backend=options.backend)
    return CoordinateCalibration(j, fits["alpha_plus"], fits["alpha_minus"], fits["gamma_plus"],
                                 fits["gamma_minus"], positive=positive, group_sizes=sizes)


def calibrate_or_fallback(d: Dataset, j: int, alpha: NuisanceFit, gamma: NuisanceFit,
                          beta_tilde: np.ndarray, w: np.ndarray, kappa: float = 1.0,
                          options: SolverOptions = SolverOptions()) -> CoordinateCalibration:
    try:
        return calibrate_beta_coordinate(d, j, alpha, gamma, beta_tilde, kappa=kappa, options=options, w=w)
    except DegenerateSplitError:
        return calibrate_beta_unsplit(d, j, alpha, gamma, w, kappa=kappa, options=options)


# --------------------------------------------------------------------------- #
# Tuning constant for the calibration penalties
# --------------------------------------------------------------------------- #
def select_kappa(d: Dataset, alpha: NuisanceFit, gamma: NuisanceFit, beta_tilde: np.ndarray,
                 folds: int = 5, seed: int = 0, grid: Sequence[float] = KAPPA_GRID,
                 options: SolverOptions = SolverOptions()) -> float:
    """Choose κ by K-fold CV of the unsplit first-coordinate calibration problems.

    The held-out losses of the α and γ problems are summed; ties go to the
    larger κ.
    """
    kappas = np.sort(np.asarray(grid, dtype=float))
    if kappas.size == 1:
        return float(kappas[0])
    w = calibration_weights(d, information_matrix(d, beta_tilde))
    weights = np.abs(w[:, 0])
    base = group_lambda(1.0, d.p, d.n)
    lams = kappas * base
    a_template = alpha_calibration_problem(d, alpha, gamma, weights, 0.0)
    g_template = gamma_calibration_problem(d, alpha, gamma, weights[: d.n], 0.0)
    scores = (cv_scores(a_template, lams, folds=folds, seed=seed, options=options)
              + cv_scores(g_template, lams, folds=folds, seed=seed, options=options))
    if not np.any(np.isfinite(scores)):
        return 1.0
    best = scores.min()
    tied = np.flatnonzero(scores <= best + 1e-12 * max(1.0, abs(best)))
    return float(kappas[tied.max()])


# --------------------------------------------------------------------------- #
# Final estimate
# --------------------------------------------------------------------------- #
@dataclass
class BetaEstimate:
    beta: np.ndarray
    preliminary_beta: np.ndarray
    per_coordinate: List[CoordinateCalibration]
    info_matrix: np.ndarray
    alpha: Optional[NuisanceFit] = None
    gamma: Optional[NuisanceFit] = None
    kappa: float = 1.0
    residuals: List[float] = field(default_factory=list)

    @property
    def q(self) -> int:
        return self.beta.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "beta": [float(b) for b in self.beta],
            "preliminary_beta": [float(b) for b in self.preliminary_beta],
            "kappa": self.kappa,
            "equation_residuals": [float(r) for r in self.residuals],
            "coordinates": [cal.to_dict() for cal in self.per_coordinate],
        }


def nuisance_values(d: Dataset, alpha: NuisanceFit, gamma: NuisanceFit) -> Tuple[np.ndarray, np.ndarray]:
    """Plain (uncalibrated) ``h`` on source rows and ``r`` on pooled rows."""
    return np.exp(d.source_x @ alpha.coef), g(d.pooled_x @ gamma.coef)


def preliminary_beta(d: Dataset, alpha: NuisanceFit, gamma: NuisanceFit) -> np.ndarray:
    h, r = nuisance_values(d, alpha, gamma)
    return solve_estimating_equation(d, h, r)


def dr_beta(d: Dataset, calibrations: Sequence[CoordinateCalibration], beta_tilde: np.ndarray,
            alpha: Optional[NuisanceFit] = None, gamma: Optional[NuisanceFit] = None,
            kappa: float = 1.0) -> BetaEstimate:
    """Plug each coordinate's sign-matched nuisances in and keep that coordinate.

    Raises :class:`SingularMatrixError` when the information at the assembled
    estimate is not positive definite.
    """
    if len(calibrations) != d.q:
        raise ValueError(f"need {d.q} coordinate calibrations, got {len(calibrations)}")
    beta = np.zeros(d.q)
    residuals: List[float] = []
    for cal in sorted(calibrations, key=lambda c: c.j):
        h, r = cal.density_ratio(d), cal.imputation(d)
        solution = solve_estimating_equation(d, h, r, init=beta_tilde)
        beta[cal.j] = solution[cal.j]
        residuals.append(float(np.max(np.abs(estimating_equation_residual(d, solution, h, r)))))
    return BetaEstimate(
        beta=beta,
        preliminary_beta=np.asarray(beta_tilde, dtype=float),
        per_coordinate=sorted(calibrations, key=lambda c: c.j),
        info_matrix=information_matrix(d, beta),
        alpha=alpha,
        gamma=gamma,
        kappa=kappa,
        residuals=residuals,
    )
