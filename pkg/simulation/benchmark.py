#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Repetition harness: generate -> fit every method -> compare with the truth.

Each repetition is one item for :class:`RepetitionStage`; failures are
counted by the stage's fail-soft batch loop and more than 5% of them abort
the benchmark. The summary table holds Bias, rMSE and coverage (CP, for the
methods that produce intervals) per method and target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from estimation.errors import BenchmarkError
from estimation.inference import beta_target, roc_target
from estimation.roc import DEFAULT_U
from orchestrator.manifest import RunManifest, write_csv, write_json
from orchestrator.parallel import sub_seed
from orchestrator.pipeline import RunSettings, TransferPipeline
from stages.base import BaseStage

from .baselines import run_baseline_im, run_baseline_iw, run_baseline_source
from .generators import SimConfig, SimulatedSample, generate_dataset
from .truth import GroundTruth, ground_truth

MAX_FAILURE_FRACTION = 0.05
METHOD_ORDER = ("dr", "iw", "im", "source")


@dataclass
class MethodEstimate:
    """Point estimates (and optional intervals) of one method on one repetition."""

    method: str
    values: Dict[str, float]
    intervals: Dict[str, Tuple[float, float]] = field(default_factory=dict)


Estimator = Callable[[SimulatedSample, int], List[MethodEstimate]]


def curve_values(beta: np.ndarray, auc: float, roc_values: Sequence[float],
                 u_values: Sequence[float]) -> Dict[str, float]:
    out = {beta_target(j): float(b) for j, b in enumerate(beta)}
    out["auc"] = float(auc)
    for u, v in zip(u_values, roc_values):
        out[roc_target(u)] = float(v)
    return out


def standard_estimator(cfg: SimConfig, settings: Optional[RunSettings] = None,
                       u_values: Sequence[float] = DEFAULT_U) -> Estimator:
    """The doubly robust fit plus the three single-model comparators.

    IW and IM reuse the doubly robust run's preliminary nuisances, so every
    method sees the same ``alpha~`` and ``gamma~``.
    """
    base = settings or RunSettings(n_min=cfg.n_min, B=cfg.B, u_values=list(u_values))
    u_values = list(u_values)

    def run(sample: SimulatedSample, rep: int) -> List[MethodEstimate]:
        d = sample.dataset
        rep_settings = replace(base, seed=sub_seed(cfg.seed, "rep", rep, "fit"), threads=1)
        result = TransferPipeline(rep_settings, quiet=True).run(d)
        roc = result.roc
        dr = MethodEstimate(
            "dr",
            curve_values(result.beta.estimate.beta, roc.auc, np.atleast_1d(roc.roc_at(u_values)), u_values),
        )
        if result.bootstrap is not None:
            for target in dr.values:
                ci = result.bootstrap.get(target, "normal")
                dr.intervals[target] = (ci.ci_lo, ci.ci_hi)

        out = [dr]
        comparators = (
            ("iw", lambda: run_baseline_iw(d, result.beta.alpha, rep_settings.eval_points)),
            ("im", lambda: run_baseline_im(d, result.beta.gamma, rep_settings.eval_points)),
            ("source", lambda: run_baseline_source(d, rep_settings.eval_points)),
        )
        for method, fit in comparators:
            beta, curve = fit()
            out.append(MethodEstimate(method, curve_values(beta, curve.auc,
                                                           np.atleast_1d(curve.roc_at(u_values)), u_values)))
        return out

    return run


class RepetitionStage(BaseStage):
    """One simulated repetition per item (``{"id": rep}``)."""

    def __init__(self, cfg: SimConfig, estimator: Estimator, quiet: bool = False):
        super().__init__(None, quiet)
        self.cfg = cfg
        self.estimator = estimator

    @property
    def name(self) -> str:
        return "benchmark"

    def process(self, item: Dict[str, Any]) -> Dict[str, Any]:
        rep = int(item["id"])
        sample = generate_dataset(self.cfg, rep)
        return {"id": rep, "status": "success", "estimates": self.estimator(sample, rep)}


@dataclass
class BenchmarkReport:
    config: SimConfig
    truth: GroundTruth
    table: pd.DataFrame
    reps: pd.DataFrame
    failures: List[Dict[str, Any]] = field(default_factory=list)
    u_values: List[float] = field(default_factory=lambda: list(DEFAULT_U))

    def to_text(self) -> str:
        cfg = self.config
        truth = self.truth.targets(self.u_values)
        lines = [
            f"config {cfg.config_id}: n={cfg.n} N={cfg.N} p={cfg.p} q={cfg.q} reps={cfg.reps} seed={cfg.seed}",
            f"failed repetitions: {len(self.failures)}",
            "truth: " + ", ".join(f"{k}={v:.4f}" for k, v in truth.items()),
            "",
            render_table(self.table),
        ]
        return "\n".join(lines) + "\n"


def summarize(reps: pd.DataFrame) -> pd.DataFrame:
    """Bias, rMSE and CP per (method, target), methods and targets in first-seen order."""
    ok = reps[reps["error"] == ""]
    rows: List[Dict[str, Any]] = []
    methods = [m for m in METHOD_ORDER if m in set(ok["method"])]
    methods += [m for m in dict.fromkeys(ok["method"]) if m not in methods]
    for method in methods:
        part = ok[ok["method"] == method]
        for target in dict.fromkeys(part["target"]):
            cell = part[part["target"] == target]
            err = cell["estimate"].to_numpy() - cell["truth"].to_numpy()
            lo, hi = cell["ci_lo"].to_numpy(), cell["ci_hi"].to_numpy()
            has_ci = bool(np.all(np.isfinite(lo) & np.isfinite(hi)))
            cp = float(np.mean(cell["covered"].to_numpy(dtype=float))) if has_ci else float("nan")
            zero_width = has_ci and bool(np.all(hi - lo == 0))
            rows.append({
                "method": method,
                "target": target,
                "bias": float(np.mean(err)),
                "rmse": float(np.sqrt(np.mean(err ** 2))),
                "cp": cp,
                "reps": int(err.size),
                "degenerate": bool(zero_width or np.all(err == 0)),
            })
    return pd.DataFrame(rows, columns=["method", "target", "bias", "rmse", "cp", "reps", "degenerate"])


def render_table(table: pd.DataFrame) -> str:
    """Aligned text rendering of a summary table (also used by ``report``)."""
    return table.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-")


def _rep_rows(rep: int, estimates: List[MethodEstimate], truth: Dict[str, float]) -> List[Dict[str, Any]]:
    rows = []
    for est in estimates:
        for target, value in est.values.items():
            lo, hi = est.intervals.get(target, (float("nan"), float("nan")))
            true = truth[target]
            rows.append({
                "rep": rep, "method": est.method, "target": target, "estimate": value, "truth": true,
                "ci_lo": lo, "ci_hi": hi, "covered": bool(lo <= true <= hi), "error": "",
            })
    return rows


def run_benchmark(cfg: SimConfig, truth: Optional[GroundTruth] = None,
                  estimator: Optional[Estimator] = None, settings: Optional[RunSettings] = None,
                  u_values: Sequence[float] = DEFAULT_U, threads: int = 1,
                  quiet: bool = False) -> BenchmarkReport:
    u_values = list(u_values)
    truth = truth if truth is not None else ground_truth(cfg)
    estimator = estimator or standard_estimator(cfg, settings, u_values)
    stage = RepetitionStage(cfg, estimator, quiet=quiet)
    stage.log(f"config {cfg.config_id}: {cfg.reps} repetitions on {threads} thread(s)")

    batch = stage.process_batch([{"id": r} for r in range(cfg.reps)], threads=threads)
    true_values = truth.targets(u_values)
    rows: List[Dict[str, Any]] = []
    failures: List[Dict[str, Any]] = []
    for rep, result in enumerate(batch["items"]):
        if result.get("status") == "success":
            rows.extend(_rep_rows(rep, result["estimates"], true_values))
        else:
            failures.append({"rep": rep, "error": result.get("error", "")})
            rows.append({"rep": rep, "method": "", "target": "", "estimate": float("nan"),
                         "truth": float("nan"), "ci_lo": float("nan"), "ci_hi": float("nan"),
                         "covered": False, "error": result.get("error", "")})

    if len(failures) > MAX_FAILURE_FRACTION * cfg.reps:
        raise BenchmarkError(f"{len(failures)} of {cfg.reps} repetitions failed "
                             f"(limit {MAX_FAILURE_FRACTION:.0%}); first: {failures[0]['error']}")
    if failures:
        stage.log(f"{len(failures)} repetition(s) failed and were left out of the table")

    reps = pd.DataFrame(rows, columns=["rep", "method", "target", "estimate", "truth",
                                       "ci_lo", "ci_hi", "covered", "error"])
    return BenchmarkReport(config=cfg, truth=truth, table=summarize(reps), reps=reps,
                           failures=failures, u_values=u_values)


def write_benchmark(report: BenchmarkReport, manifest: RunManifest) -> List[Path]:
    """``benchmark.csv``, ``benchmark.txt``, ``reps.csv`` and ``truth.json``."""
    out = manifest.out
    text_path = out / "benchmark.txt"
    with open(text_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(report.to_text())
    return [
        write_csv(out / "benchmark.csv", report.table, manifest),
        text_path,
        write_csv(out / "reps.csv", report.reps, manifest),
        write_json(out / "truth.json", report.truth.to_dict(report.u_values), manifest),
    ]
