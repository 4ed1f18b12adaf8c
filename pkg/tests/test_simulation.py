"""Tests for the simulation generators, population truth, comparators and the benchmark harness."""

import functools
import math
import os

import numpy as np
import pandas as pd
import pytest

from estimation.beta import solve_estimating_equation, solve_logistic_score
from estimation.errors import BenchmarkError
from estimation.links import g
from estimation.penalized import NuisanceFit
from orchestrator.manifest import RunManifest, read_csv
from orchestrator.pipeline import RunSettings
from simulation import (
    GroundTruth,
    SimConfig,
    generate_dataset,
    generate_u,
    ground_truth,
    prediction_agreement,
    run_baseline_im,
    run_baseline_iw,
    run_baseline_source,
    run_benchmark,
    summarize,
    write_benchmark,
)
from simulation.benchmark import MethodEstimate
from simulation.generators import (
    TRUNC_SD,
    TRUNCATION,
    draw_population,
    outcome_coefficients,
    outcome_logit,
    selection_coefficients,
    selection_logit,
)
from simulation.truth import tabulate_roc
from tests.synth import make_dataset

SMALL = dict(n=60, N=300, p=5, reps=4, seed=3, n_min=20, B=100, truth_rows=20000)
U_VALUES = [0.1, 0.2]


def small_config(config_id="i", **kwargs):
    return SimConfig(config_id, **{**SMALL, **kwargs})


def flat_truth(config_id="i"):
    grid = np.linspace(0.0, 1.0, 11)
    return GroundTruth(
        config_id=config_id,
        beta0=np.array([0.5, 0.4, -0.4, 0.3]),
        beta0_se=np.full(4, 0.01),
        auc0=0.7,
        auc0_se=0.01,
        roc0=pd.DataFrame({"u": grid, "roc": grid, "se": np.zeros_like(grid)}),
        mu0=0.6,
        mu0_se=0.01,
        rows=1000,
        source_share=0.2,
    )


# ---------------- generators ----------------

def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig("iv")
    with pytest.raises(ValueError):
        SimConfig("i", q=3)
    with pytest.raises(ValueError):
        SimConfig("i", p=4)
    assert SimConfig("ii").is_full_scale
    assert SimConfig("ii", p=200).is_full_scale
    assert not small_config().is_full_scale


def test_generate_u_is_standardized_and_bounded():
    u = generate_u(20000, p=5, q=4, seed=0)
    assert u.shape == (20000, 9)
    assert np.all(u[:, 0] == 1.0)
    assert np.max(np.abs(u[:, 1:])) <= TRUNCATION / TRUNC_SD
    np.testing.assert_allclose(u[:, 1:].mean(axis=0), 0.0, atol=0.04)
    np.testing.assert_allclose(u[:, 1:].std(axis=0), 1.0, atol=0.04)


def test_generate_u_is_seeded():
    np.testing.assert_array_equal(generate_u(50, 5, 4, seed=1), generate_u(50, 5, 4, seed=1))
    assert not np.array_equal(generate_u(50, 5, 4, seed=1), generate_u(50, 5, 4, seed=2))


def test_misspecification_terms():
    x = generate_u(100, 5, 4, seed=4)
    base_y = outcome_logit(small_config("i"), x)
    base_s = selection_logit(small_config("i"), x)
    np.testing.assert_allclose(outcome_logit(small_config("ii"), x) - base_y,
                               0.5 * x[:, 1] * x[:, 2] + 0.3 * x[:, 3] ** 2)
    np.testing.assert_allclose(selection_logit(small_config("iii"), x) - base_s,
                               0.4 * x[:, 1] ** 2 + 0.4 * x[:, 2] * x[:, 4])
    np.testing.assert_array_equal(selection_logit(small_config("ii"), x), base_s)
    np.testing.assert_array_equal(outcome_logit(small_config("iii"), x), base_y)


@pytest.mark.parametrize("config_id, ratio_ok, imputation_ok",
                         [("i", True, True), ("ii", True, False), ("iii", False, True)])
def test_generated_sample_shape_and_flags(config_id, ratio_ok, imputation_ok):
    sample = generate_dataset(small_config(config_id), rep=0)
    d = sample.dataset
    assert (d.n, d.N, d.q, d.p) == (60, 300, 4, 5)
    assert sample.hidden_target_y.shape == (300,)
    assert sample.truth_flags == {"density_ratio_correct": ratio_ok, "imputation_correct": imputation_ok}


def test_generated_samples_are_keyed_by_repetition():
    cfg = small_config()
    a = generate_dataset(cfg, rep=1).dataset
    b = generate_dataset(cfg, rep=1).dataset
    c = generate_dataset(cfg, rep=2).dataset
    np.testing.assert_array_equal(a.source_x, b.source_x)
    np.testing.assert_array_equal(a.source_y, b.source_y)
    assert not np.array_equal(a.source_x, c.source_x)


# ---------------- truth ----------------

def test_ground_truth_for_each_setting():
    truth_i = ground_truth(small_config("i"), rows=20000)
    assert truth_i.beta0.shape == (4,)
    assert np.all(truth_i.beta0_se > 0)
    assert 0.5 < truth_i.auc0 < 1.0
    assert 0.0 < truth_i.mu0 < 1.0
    assert 0.05 < truth_i.source_share < 0.4
    assert truth_i.alpha0 is not None and truth_i.gamma0 is not None
    assert set(truth_i.targets(U_VALUES)) == {"beta_1", "beta_2", "beta_3", "beta_4",
                                               "auc", "roc_at_0.1", "roc_at_0.2"}
    assert np.all(np.diff(truth_i.roc0["roc"].to_numpy()) >= 0)

    assert ground_truth(small_config("ii"), rows=5000).gamma0 is None
    assert ground_truth(small_config("iii"), rows=5000).alpha0 is None


def test_true_density_ratio_averages_to_one_on_source_rows():
    cfg = small_config("i")
    truth = ground_truth(cfg, rows=5000)
    x, s, _ = draw_population(cfg, 300000, np.random.default_rng(1))
    h = np.exp(x[s] @ truth.alpha0)
    assert h.mean() == pytest.approx(1.0, abs=0.05)


def test_truth_is_reproducible():
    a = ground_truth(small_config(), rows=5000)
    b = ground_truth(small_config(), rows=5000)
    np.testing.assert_array_equal(a.beta0, b.beta0)
    assert a.auc0 == b.auc0


def test_tabulated_roc_of_a_perfect_score():
    y = np.r_[np.zeros(50), np.ones(50)]
    table = tabulate_roc(y, y + 0.0, grid=np.array([0.0, 0.5, 1.0]))
    np.testing.assert_allclose(table["roc"], [1.0, 1.0, 1.0])


# ---------------- comparators ----------------

def test_source_baseline_is_the_source_mle():
    d = make_dataset(n=150, N=200, seed=3)
    beta, curve = run_baseline_source(d)
    A = d.source_a
    expected = solve_logistic_score(A, A.T @ d.source_y / d.n, np.full(d.n, 1.0 / d.n))
    np.testing.assert_allclose(beta, expected, atol=1e-10)
    assert curve.method == "source"
    assert 0.5 < curve.auc < 1.0


def test_unit_density_ratio_weighting_equals_the_source_fit():
    d = make_dataset(n=150, N=200, seed=3)
    iw_beta, iw_curve = run_baseline_iw(d, NuisanceFit.fixed(np.zeros(d.width), "exp_linear"))
    src_beta, src_curve = run_baseline_source(d)
    np.testing.assert_allclose(iw_beta, src_beta, atol=1e-10)
    assert iw_curve.auc == pytest.approx(src_curve.auc, abs=1e-12)
    assert iw_curve.method == "iw"


def test_imputation_with_the_planted_model_recovers_it():
    d = make_dataset(n=100, N=400, q=3, p=0, seed=5)
    gamma = np.array([0.2, -0.7, 0.4])
    beta, curve = run_baseline_im(d, NuisanceFit.fixed(gamma))
    np.testing.assert_allclose(beta, gamma, atol=1e-8)
    assert curve.method == "im"


def test_prediction_agreement():
    d = make_dataset(n=50, N=200, seed=1)
    beta = np.array([0.1, 0.5, -0.2])
    same = prediction_agreement(d, beta, beta)
    assert same["rmspe"] == 0.0
    assert same["classifier_correlation"] == pytest.approx(1.0)
    assert same["false_classification_rate"] == 0.0
    flipped = prediction_agreement(d, beta, -beta)
    assert flipped["classifier_correlation"] < 0
    assert flipped["false_classification_rate"] > 0.5
    constant = prediction_agreement(d, beta, np.zeros(3))
    assert np.isnan(constant["classifier_correlation"])


# ---------------- summary table ----------------

def _rows(method, estimates, truth, lo=np.nan, hi=np.nan, error=""):
    return [{"rep": r, "method": method, "target": "auc", "estimate": e, "truth": truth,
             "ci_lo": lo, "ci_hi": hi, "covered": bool(lo <= truth <= hi), "error": error}
            for r, e in enumerate(estimates)]


def test_summarize_bias_rmse_and_coverage():
    reps = pd.DataFrame(
        _rows("dr", [0.7, 0.7, 0.7], 0.7, 0.6, 0.8)
        + _rows("iw", [0.8, 0.8, 0.8], 0.7)
        + _rows("source", [0.0], 0.7, error="RuntimeError: boom")
    )
    table = summarize(reps).set_index("method")
    assert table.loc["dr", "bias"] == 0.0
    assert table.loc["dr", "rmse"] == 0.0
    assert table.loc["dr", "cp"] == 1.0
    assert bool(table.loc["dr", "degenerate"])
    assert table.loc["iw", "bias"] == pytest.approx(0.1)
    assert table.loc["iw", "rmse"] == pytest.approx(0.1)
    assert np.isnan(table.loc["iw", "cp"])
    assert not bool(table.loc["iw", "degenerate"])
    assert "source" not in table.index


def test_zero_width_intervals_are_flagged():
    reps = pd.DataFrame(_rows("dr", [0.71, 0.69], 0.7, 0.7, 0.7))
    row = summarize(reps).iloc[0]
    assert bool(row["degenerate"])
    assert row["cp"] == 1.0


# ---------------- harness ----------------

def shifted_estimator(shift=0.01, fail_reps=()):
    truth = flat_truth().targets(U_VALUES)

    def run(sample, rep):
        if rep in fail_reps:
            raise RuntimeError(f"rep {rep} failed")
        values = {k: v + shift for k, v in truth.items()}
        intervals = {k: (v - 0.05, v + 0.05) for k, v in values.items()}
        return [MethodEstimate("dr", values, intervals), MethodEstimate("source", dict(truth))]

    return run


def test_benchmark_with_a_stub_estimator(tmp_path):
    cfg = small_config(reps=4)
    report = run_benchmark(cfg, truth=flat_truth(), estimator=shifted_estimator(),
                           u_values=U_VALUES, quiet=True)
    table = report.table.set_index(["method", "target"])
    assert table.loc[("dr", "auc"), "bias"] == pytest.approx(0.01)
    assert table.loc[("dr", "auc"), "cp"] == 1.0
    assert bool(table.loc[("source", "auc"), "degenerate"])
    assert len(report.reps) == 4 * 2 * 7
    assert "config i" in report.to_text()

    manifest = RunManifest(command="simulate", seed=cfg.seed, output_dir=str(tmp_path), simulation=cfg.to_dict())
    paths = write_benchmark(report, manifest)
    assert sorted(p.name for p in paths) == ["benchmark.csv", "benchmark.txt", "reps.csv", "truth.json"]
    back = read_csv(tmp_path / "benchmark.csv")
    assert list(back.columns) == ["method", "target", "bias", "rmse", "cp", "reps", "degenerate"]
    assert (tmp_path / "benchmark.csv").read_text(encoding="utf-8").startswith("# manifest: ")


def test_benchmark_tolerates_a_few_failures():
    cfg = small_config(reps=20)
    report = run_benchmark(cfg, truth=flat_truth(), estimator=shifted_estimator(fail_reps=(5,)),
                           u_values=U_VALUES, quiet=True)
    assert [f["rep"] for f in report.failures] == [5]
    assert set(report.table["reps"]) == {19}


def test_benchmark_aborts_past_the_failure_limit():
    cfg = small_config(reps=10)
    with pytest.raises(BenchmarkError, match="1 of 10"):
        run_benchmark(cfg, truth=flat_truth(), estimator=shifted_estimator(fail_reps=(0,)),
                      u_values=U_VALUES, quiet=True)


def test_benchmark_end_to_end_with_every_method():
    cfg = small_config(n=150, N=300, reps=2, n_min=40)
    settings = RunSettings(cv_folds=3, lambda_grid_size=4, kappa=1.0, bootstrap=False,
                           n_min=40, eval_points=100, u_values=U_VALUES)
    truth = ground_truth(cfg, rows=20000)
    report = run_benchmark(cfg, truth=truth, settings=settings, u_values=U_VALUES, quiet=True)
    assert not report.failures
    assert list(dict.fromkeys(report.table["method"])) == ["dr", "iw", "im", "source"]
    assert report.table["cp"].isna().all()
    assert (report.table["reps"] == 2).all()


# ---------------- population double robustness ----------------

def _plugged_beta(config_id, rows):
    """Solve the augmented equation with one nuisance exact and the other a wrong working model."""
    cfg = SimConfig(config_id, n=rows, N=rows, p=5, seed=11, truth_rows=200_000)
    truth = ground_truth(cfg)
    d = generate_dataset(cfg, rep=0).dataset
    shift = math.log(truth.source_share / (1.0 - truth.source_share))
    if config_id == "ii":
        h = np.exp(selection_logit(cfg, d.source_x) + shift)
        r = g(d.pooled_x @ outcome_coefficients(cfg, d.width))
    else:
        h = np.exp(d.source_x @ selection_coefficients(cfg, d.width) + shift)
        r = g(outcome_logit(cfg, d.pooled_x))
    return solve_estimating_equation(d, h, r), truth.beta0


@pytest.mark.parametrize("config_id", ["ii", "iii"])
def test_one_correct_nuisance_recovers_beta0(config_id):
    beta, beta0 = _plugged_beta(config_id, rows=20000)
    np.testing.assert_allclose(beta, beta0, atol=0.12)


@pytest.mark.slow
@pytest.mark.parametrize("config_id", ["ii", "iii"])
def test_one_correct_nuisance_recovers_beta0_at_scale(config_id):
    beta, beta0 = _plugged_beta(config_id, rows=100_000)
    np.testing.assert_allclose(beta, beta0, atol=0.06)


# ---------------- full-scale acceptance ----------------

@functools.lru_cache(maxsize=None)
def _full_scale_table(config_id):
    report = run_benchmark(SimConfig(config_id), threads=os.cpu_count() or 1, quiet=True)
    assert len(report.failures) <= 0.05 * report.config.reps
    return report.table


def _cell(table, method, target):
    return table[(table["method"] == method) & (table["target"] == target)].iloc[0]


@pytest.mark.slow
@pytest.mark.parametrize("config_id", ["i", "ii", "iii"])
def test_doubly_robust_bias_is_small(config_id):
    table = _full_scale_table(config_id)
    for j in range(1, 5):
        cell = _cell(table, "dr", f"beta_{j}")
        assert abs(cell["bias"]) <= 0.25 * cell["rmse"]
    assert abs(_cell(table, "dr", "auc")["bias"]) <= 0.015
    for u in U_VALUES:
        assert abs(_cell(table, "dr", f"roc_at_{u}")["bias"]) <= 0.02
    if config_id == "i":
        assert _cell(table, "dr", "auc")["rmse"] <= 0.05


@pytest.mark.slow
@pytest.mark.parametrize("config_id, method, target", [("ii", "im", "roc_at_0.1"), ("iii", "iw", "auc")])
def test_single_model_comparator_is_more_biased(config_id, method, target):
    table = _full_scale_table(config_id)
    assert abs(_cell(table, method, target)["bias"]) >= 2 * abs(_cell(table, "dr", target)["bias"])


@pytest.mark.slow
@pytest.mark.parametrize("config_id", ["i", "ii", "iii"])
def test_bootstrap_intervals_cover(config_id):
    table = _full_scale_table(config_id)
    dr = table[table["method"] == "dr"]
    assert dr["cp"].notna().all()
    assert dr["cp"].between(0.90, 0.98).all(), dr[["target", "cp"]].to_string()
