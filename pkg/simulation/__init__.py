"""Simulation benchmark: generators, population truth, comparators and the repetition harness."""

from .baselines import prediction_agreement, run_baseline_im, run_baseline_iw, run_baseline_source
from .benchmark import BenchmarkReport, RepetitionStage, render_table, run_benchmark, summarize, write_benchmark
from .generators import SimConfig, SimulatedSample, generate_dataset, generate_u
from .truth import GroundTruth, ground_truth

__all__ = [
    "BenchmarkReport",
    "GroundTruth",
    "RepetitionStage",
    "SimConfig",
    "SimulatedSample",
    "generate_dataset",
    "generate_u",
    "ground_truth",
    "prediction_agreement",
    "render_table",
    "run_baseline_im",
    "run_baseline_iw",
    "run_baseline_source",
    "run_benchmark",
    "summarize",
    "write_benchmark",
]
