#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Fit pipeline: preliminary nuisances -> β~ -> calibrated β -> ROC -> bootstrap.

``TransferPipeline.fit_beta`` covers the β half of the procedure,
``fit_roc`` the curve half and ``bootstrap`` the inference. ``run`` chains
all three. Every random choice (CV folds, bootstrap multipliers) is keyed off
``RunSettings.seed`` through :mod:`orchestrator.parallel`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from estimation.beta import (
    KAPPA_GRID,
    BetaEstimate,
    calibrate_or_fallback,
    calibration_weights,
    density_ratio_problem,
    dr_beta,
    fit_preliminary_nuisances,
    imputation_problem,
    information_matrix,
    preliminary_beta,
    select_kappa,
)
from estimation.data import Dataset, require_label_variation
from estimation.inference import BootstrapReport, multiplier_bootstrap, sandwich_se
from estimation.penalized import NuisanceFit, SolverOptions, cross_validate_lambda, lambda_grid
from estimation.roc import (
    DEFAULT_U,
    CalibratedGrid,
    RocEstimate,
    calibrate_grid,
    default_n_min,
    quantile_grid,
    roc_curve,
)
from solvers import available_solvers
from stages.base import BaseStage

from .parallel import mapper, parallel_map, sub_seed


@dataclass
class RunSettings:
    """Every tuning knob of one fit, resolved from config and CLI flags."""

    cv_folds: int = 5
    lambda_grid_size: int = 20
    lambda_lo: float = 0.01
    lambda_hi: float = 0.5
    lambda_alpha: Optional[float] = None
    lambda_gamma: Optional[float] = None
    kappa: Optional[float] = None
    kappa_grid: List[float] = field(default_factory=lambda: list(KAPPA_GRID))
    backend: str = "proximal"
    tol: float = 1e-7
    max_iter: int = 10000
    n_min: Optional[int] = None
    u_values: List[float] = field(default_factory=lambda: list(DEFAULT_U))
    eval_points: Optional[int] = None
    bootstrap: bool = True
    B: int = 500
    level: float = 0.95
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_config(cls, config) -> "RunSettings":
        lo, hi = config.lambda_range
        return cls(
            cv_folds=config.cv_folds,
            lambda_grid_size=config.lambda_grid_size,
            lambda_lo=lo,
            lambda_hi=hi,
            lambda_alpha=config.lambda_alpha,
            lambda_gamma=config.lambda_gamma,
            kappa=config.kappa,
            kappa_grid=config.kappa_grid,
            backend=config.backend,
            tol=config.tol,
            max_iter=config.max_iter,
            n_min=config.n_min,
            u_values=config.u_values,
            eval_points=config.eval_points,
            bootstrap=config.bootstrap_enabled,
            B=config.bootstrap_B,
            level=config.level,
            seed=config.seed,
            threads=config.threads,
        )

    @property
    def options(self) -> SolverOptions:
        return SolverOptions(tol=self.tol, max_iter=self.max_iter, backend=self.backend)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class BetaFit:
    alpha: NuisanceFit
    gamma: NuisanceFit
    estimate: BetaEstimate
    lambdas: Dict[str, Any]
    sandwich_se: List[float] = field(default_factory=list)

    def nuisance_meta(self) -> Dict[str, Any]:
        return {
            "lambdas": self.lambdas,
            "kappa": self.estimate.kappa,
            "preliminary": {"alpha": self.alpha.to_dict(), "gamma": self.gamma.to_dict()},
            "coordinates": [cal.to_dict() for cal in self.estimate.per_coordinate],
            "fallback": [cal.j + 1 for cal in self.estimate.per_coordinate if cal.fallback],
        }


@dataclass
class PipelineResult:
    beta: BetaFit
    roc: Optional[RocEstimate] = None
    calibrated: Optional[CalibratedGrid] = None
    bootstrap: Optional[BootstrapReport] = None


class TransferPipeline(BaseStage):
    """Runs the doubly robust transfer fit on one dataset."""

    def __init__(self, settings: Optional[RunSettings] = None, config=None, quiet: bool = False):
        super().__init__(config, quiet)
        self.settings = settings or (RunSettings.from_config(config) if config is not None else RunSettings())
        if self.settings.backend not in available_solvers():
            self.log(f"Unknown solver backend {self.settings.backend!r}, using proximal")

    @property
    def name(self) -> str:
        return "pipeline"

    # ------------------------------------------------------------------ #
    def _select_lambda(self, d: Dataset, which: str) -> float:
        s = self.settings
        override = s.lambda_alpha if which == "alpha" else s.lambda_gamma
        if override is not None:
            return float(override)
        grid = lambda_grid(d.p, d.n, size=s.lambda_grid_size, lo=s.lambda_lo, hi=s.lambda_hi)
        template = density_ratio_problem(d, 0.0) if which == "alpha" else imputation_problem(d, 0.0)
        return cross_validate_lambda(template, grid, folds=s.cv_folds,
                                     seed=sub_seed(s.seed, "cv", which), options=s.options)

    def fit_beta(self, d: Dataset) -> BetaFit:
        s = self.settings
        require_label_variation(d)

        lam_alpha = self._select_lambda(d, "alpha")
        lam_gamma = self._select_lambda(d, "gamma")
        alpha, gamma = fit_preliminary_nuisances(d, lam_alpha, lam_gamma, s.options)
        self.log(f"preliminary fits: lambda_alpha={lam_alpha:.4g} (kkt {alpha.kkt_residual:.2g}), "
                 f"lambda_gamma={lam_gamma:.4g} (kkt {gamma.kkt_residual:.2g})")

        beta_tilde = preliminary_beta(d, alpha, gamma)
        if s.kappa is not None:
            kappa = s.kappa
        else:
            kappa = select_kappa(d, alpha, gamma, beta_tilde, folds=s.cv_folds,
                                 seed=sub_seed(s.seed, "cv", "kappa"), grid=s.kappa_grid, options=s.options)
        self.log(f"preliminary beta={np.round(beta_tilde, 4).tolist()} kappa={kappa:g}")

        w = calibration_weights(d, information_matrix(d, beta_tilde))
        calibrations = parallel_map(
            lambda j: calibrate_or_fallback(d, j, alpha, gamma, beta_tilde, w, kappa=kappa, options=s.options),
            range(d.q), s.threads,
        )
        for cal in calibrations:
            if cal.fallback:
                self.log(f"coordinate {cal.j + 1}: sign group too small, unsplit calibration used")

        estimate = dr_beta(d, calibrations, beta_tilde, alpha=alpha, gamma=gamma, kappa=kappa)
        self.log(f"beta={np.round(estimate.beta, 4).tolist()}")
        lambdas = {
            "alpha": lam_alpha,
            "gamma": lam_gamma,
            "alpha_source": "override" if s.lambda_alpha is not None else "cv",
            "gamma_source": "override" if s.lambda_gamma is not None else "cv",
        }
        fit = BetaFit(alpha=alpha, gamma=gamma, estimate=estimate, lambdas=lambdas)
        fit.sandwich_se = [sandwich_se(d, j, estimate) for j in range(d.q)]
        return fit

    def fit_roc(self, d: Dataset, beta_fit: BetaFit) -> PipelineResult:
        s = self.settings
        beta = beta_fit.estimate.beta
        n_min = s.n_min if s.n_min is not None else default_n_min(d.n, d.p)
        n_min = min(n_min, d.n)
        grid = quantile_grid(d, beta, n_min)
        if grid.collapsed:
            self.log(f"{grid.collapsed} tied cutoffs collapsed (m={grid.cutoffs.size} of {grid.m})")
        calibrated = calibrate_grid(d, beta, beta_fit.alpha, beta_fit.gamma, grid,
                                    kappa=beta_fit.estimate.kappa, options=s.options, mapper=mapper(s.threads))
        roc = roc_curve(d, beta, calibrated, s.eval_points)
        self.log(f"auc={roc.auc:.4f} with m={grid.cutoffs.size} cutoffs (n_min={n_min})")
        return PipelineResult(beta=beta_fit, roc=roc, calibrated=calibrated)

    def bootstrap(self, d: Dataset, result: PipelineResult) -> BootstrapReport:
        s = self.settings
        report = multiplier_bootstrap(d, result.beta.estimate, result.calibrated, result.roc,
                                      B=s.B, level=s.level, seed=s.seed, u_values=s.u_values,
                                      threads=s.threads, eval_points=s.eval_points)
        self.log(f"bootstrap: {report.requested - report.dropped}/{report.requested} replicates kept")
        result.bootstrap = report
        return report

    def run(self, d: Dataset, with_roc: bool = True) -> PipelineResult:
        beta_fit = self.fit_beta(d)
        if not with_roc:
            return PipelineResult(beta=beta_fit)
        result = self.fit_roc(d, beta_fit)
        if self.settings.bootstrap:
            self.bootstrap(d, result)
        return result

    def process(self, item: Dict[str, Any]) -> Dict[str, Any]:
        result = self.run(item["dataset"], with_roc=item.get("with_roc", True))
        return {"id": item.get("id"), "status": "success", "result": result}
