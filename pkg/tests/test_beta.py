"""Tests for the doubly robust β: estimating equation, calibration and the pipeline's β half."""

import math

import numpy as np
import pytest

from estimation.beta import (
    CoordinateCalibration,
    calibrate_beta_coordinate,
    calibrate_or_fallback,
    calibration_weights,
    dr_beta,
    effective_count,
    estimating_equation_residual,
    group_lambda,
    information_matrix,
    select_kappa,
    solve_estimating_equation,
    solve_logistic_score,
)
from estimation.data import Dataset
from estimation.errors import (
    DataError,
    DegenerateSplitError,
    EstimatingEquationError,
    SingularMatrixError,
)
from estimation.links import g, g_dot
from estimation.penalized import NuisanceFit
from orchestrator.pipeline import RunSettings, TransferPipeline
from simulation import SimConfig, generate_dataset, ground_truth
from tests.synth import make_dataset, make_mirrored_dataset

FAST = dict(cv_folds=3, lambda_grid_size=4, kappa=1.0, bootstrap=False)


def zero_fits(width):
    return NuisanceFit.fixed(np.zeros(width), "exp_linear"), NuisanceFit.fixed(np.zeros(width), "logistic")


def source_mle(d):
    A = d.source_a
    return solve_logistic_score(A, A.T @ d.source_y / d.n, np.full(d.n, 1.0 / d.n))


def test_logistic_score_root_has_tiny_residual():
    d = make_dataset(n=300, N=300, seed=2)
    beta = source_mle(d)
    A = d.source_a
    residual = A.T @ (d.source_y - g(A @ beta)) / d.n
    assert np.max(np.abs(residual)) <= 1e-9


def test_known_nuisances_recover_the_planted_beta():
    d = make_dataset(n=150, N=250, seed=6)
    beta_star = np.array([0.4, -0.8, 0.3])
    h = np.ones(d.n)
    r = np.concatenate([d.source_y, g(d.target_a @ beta_star)])
    beta = solve_estimating_equation(d, h, r)
    np.testing.assert_allclose(beta, beta_star, atol=1e-7)
    assert np.max(np.abs(estimating_equation_residual(d, beta, h, r))) <= 1e-9


def test_separated_labels_have_no_root():
    x = np.linspace(-0.1, 0.1, 40)
    A = np.column_stack([np.ones(40), x])
    y = (x > 0).astype(float)
    with pytest.raises(EstimatingEquationError):
        solve_logistic_score(A, A.T @ y / 40, np.full(40, 1.0 / 40))


def test_estimating_equation_rejects_bad_plug_ins():
    d = make_dataset(n=40, N=40, seed=1)
    r = np.full(d.n + d.N, 0.5)
    with pytest.raises(ValueError):
        solve_estimating_equation(d, np.ones(d.n - 1), r)
    with pytest.raises(ValueError):
        solve_estimating_equation(d, -np.ones(d.n), r)
    with pytest.raises(ValueError):
        solve_estimating_equation(d, np.ones(d.n), np.full(d.n + d.N, 1.5))


def test_collinear_risk_factor_makes_information_singular():
    rng = np.random.default_rng(0)
    x = np.column_stack([np.ones(30), np.ones(30), rng.standard_normal(30)])
    d = Dataset(np.tile([0.0, 1.0], 15), x, x.copy(), q=2, p=1)
    with pytest.raises(SingularMatrixError):
        information_matrix(d, np.zeros(2))


def test_dr_beta_rejects_singular_information(monkeypatch):
    rng = np.random.default_rng(0)
    x = np.column_stack([np.ones(30), np.ones(30), rng.standard_normal(30)])
    d = Dataset(np.tile([0.0, 1.0], 15), x, x.copy(), q=2, p=1)
    alpha, gamma = zero_fits(d.width)
    everyone = np.ones(d.n + d.N, dtype=bool)
    cals = [CoordinateCalibration(j, alpha, alpha, gamma, gamma, positive=everyone, fallback=True)
            for j in range(d.q)]
    monkeypatch.setattr("estimation.beta.solve_estimating_equation", lambda *a, **k: np.zeros(d.q))
    with pytest.raises(SingularMatrixError):
        dr_beta(d, cals, np.zeros(d.q))


def test_calibration_weights_invert_the_information():
    d = make_dataset(n=200, N=300, seed=4)
    beta = source_mle(d)
    w = calibration_weights(d, information_matrix(d, beta))
    A = d.target_a
    moment = (w[d.n:] * g_dot(A @ beta)[:, None]).T @ A / d.N
    np.testing.assert_allclose(moment, np.eye(d.q), atol=1e-8)


def test_group_lambda():
    assert group_lambda(2.0, 100, 400) == pytest.approx(2.0 * math.sqrt(math.log(100) / 400))


def test_effective_count_discounts_unequal_weights():
    assert effective_count(np.full(12, -0.4)) == pytest.approx(12.0)
    assert effective_count(np.r_[100.0, np.full(20, 1e-3)]) < 1.1
    assert effective_count(np.array([])) == 0.0


def test_sign_group_lambda_uses_effective_source_count():
    d = make_dataset(n=200, N=300, seed=4)
    alpha, gamma = zero_fits(d.width)
    w = calibration_weights(d, information_matrix(d, source_mle(d)))
    cal = calibrate_beta_coordinate(d, 1, alpha, gamma, source_mle(d), w=w, kappa=0.5)
    source = d.source_mask
    for sign, members in (("plus", w[:, 1] > 0), ("minus", w[:, 1] <= 0)):
        eff = effective_count(w[members & source, 1])
        assert eff < cal.group_sizes[f"{sign}_source"]
        assert cal.group_sizes[f"{sign}_source_effective"] == pytest.approx(eff, abs=1e-3)
        expected = group_lambda(0.5, d.p, eff)
        assert getattr(cal, f"alpha_{sign}").lam == pytest.approx(expected)
        assert getattr(cal, f"gamma_{sign}").lam == pytest.approx(expected)


def test_all_positive_weights_are_a_degenerate_split():
    d = make_dataset(n=60, N=80, seed=3)
    alpha, gamma = zero_fits(d.width)
    w = np.ones((d.n + d.N, d.q))
    with pytest.raises(DegenerateSplitError, match="coordinate 1"):
        calibrate_beta_coordinate(d, 0, alpha, gamma, np.zeros(d.q), w=w)


def test_degenerate_split_falls_back_to_unsplit_calibration():
    d = make_dataset(n=60, N=80, seed=3)
    alpha, gamma = zero_fits(d.width)
    w = np.ones((d.n + d.N, d.q))
    cal = calibrate_or_fallback(d, 0, alpha, gamma, np.zeros(d.q), w)
    assert cal.fallback
    assert cal.alpha_plus is cal.alpha_minus
    assert cal.gamma_plus is cal.gamma_minus
    assert cal.to_dict()["group_sizes"] == {"all": d.n + d.N}


def test_sign_groups_partition_the_rows():
    d = make_dataset(n=200, N=300, seed=4)
    alpha, gamma = zero_fits(d.width)
    beta = source_mle(d)
    w = calibration_weights(d, information_matrix(d, beta))
    cal = calibrate_beta_coordinate(d, 1, alpha, gamma, beta, w=w)
    sizes = cal.group_sizes
    assert sizes["plus_source"] + sizes["minus_source"] == d.n
    assert sizes["plus_target"] + sizes["minus_target"] == d.N
    np.testing.assert_array_equal(cal.positive, w[:, 1] > 0)
    for fit in cal.fits().values():
        assert fit.kkt_residual <= 1e-7


def test_nonfinite_preliminary_beta_is_rejected():
    d = make_dataset(n=40, N=40, seed=1)
    alpha, gamma = zero_fits(d.width)
    with pytest.raises(ValueError):
        calibrate_beta_coordinate(d, 0, alpha, gamma, np.array([np.nan, 0.0, 0.0]))


def test_single_kappa_grid_skips_cv():
    d = make_dataset(n=60, N=60, seed=8)
    alpha, gamma = zero_fits(d.width)
    assert select_kappa(d, alpha, gamma, np.zeros(d.q), grid=[0.5]) == 0.5


def test_kappa_cv_picks_a_grid_member():
    d = make_dataset(n=150, N=200, seed=9)
    alpha, gamma = zero_fits(d.width)
    chosen = select_kappa(d, alpha, gamma, source_mle(d), folds=3, grid=(0.5, 2.0))
    assert chosen in (0.5, 2.0)


def test_pipeline_beta_solves_every_coordinate_equation():
    d = make_dataset(n=200, N=400, seed=0)
    fit = TransferPipeline(RunSettings(**FAST), quiet=True).fit_beta(d)
    est = fit.estimate
    assert est.beta.shape == (d.q,)
    assert len(est.residuals) == d.q
    assert max(est.residuals) <= 1e-9
    assert all(se > 0 and np.isfinite(se) for se in fit.sandwich_se)
    meta = fit.nuisance_meta()
    assert meta["lambdas"]["alpha_source"] == "cv"
    assert len(meta["coordinates"]) == d.q


def test_no_shift_reproduces_the_source_fit():
    d = make_mirrored_dataset(n=300, q=2, p=3)
    fit = TransferPipeline(RunSettings(**FAST), quiet=True).fit_beta(d)
    np.testing.assert_allclose(fit.estimate.beta, source_mle(d), atol=1e-6)


def test_lambda_overrides_are_recorded():
    d = make_dataset(n=120, N=200, seed=5)
    settings = RunSettings(**FAST, lambda_alpha=0.05, lambda_gamma=0.04)
    fit = TransferPipeline(settings, quiet=True).fit_beta(d)
    assert fit.lambdas == {"alpha": 0.05, "gamma": 0.04,
                           "alpha_source": "override", "gamma_source": "override"}
    assert fit.alpha.lam == 0.05 and fit.gamma.lam == 0.04


def test_constant_labels_stop_the_fit():
    d = make_dataset(n=50, N=50, seed=2)
    ones = Dataset(np.ones(d.n), d.source_x, d.target_x, q=d.q, p=d.p)
    with pytest.raises(DataError, match="degenerate labels"):
        TransferPipeline(RunSettings(**FAST), quiet=True).fit_beta(ones)


# ---------------- calibration at the truth ----------------

@pytest.mark.slow
def test_density_ratio_calibration_barely_moves_at_the_truth():
    cfg = SimConfig("i", n=4000, N=20000, p=10, seed=1, truth_rows=200_000)
    truth = ground_truth(cfg)
    d = generate_dataset(cfg, rep=0).dataset
    alpha = NuisanceFit.fixed(truth.alpha0, "exp_linear")
    gamma = NuisanceFit.fixed(truth.gamma0, "logistic")
    w = calibration_weights(d, information_matrix(d, truth.beta0))
    for j in range(1, d.q):
        cal = calibrate_or_fallback(d, j, alpha, gamma, truth.beta0, w)
        for fit in (cal.alpha_plus, cal.alpha_minus):
            assert np.sum(np.abs(fit.delta)) <= 0.05
