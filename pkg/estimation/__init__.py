"""Numerical core: data model, penalized nuisance fits, β, ROC and inference."""

from .data import ColumnLayout, Dataset, PopulationConstants, load_dataset, population_constants, write_dataset
from .errors import (
    BenchmarkError,
    BootstrapError,
    CalibrationError,
    DataError,
    DegenerateFoldError,
    DegeneratePrevalenceError,
    DegenerateSplitError,
    EstimatingEquationError,
    SingularMatrixError,
    SolverDivergence,
    SolverError,
    TransferError,
)
from .penalized import NuisanceFit, PenalizedProblem, SolverOptions, cross_validate_lambda, kkt_residual, solve_penalized

__all__ = [
    "BenchmarkError",
    "BootstrapError",
    "CalibrationError",
    "ColumnLayout",
    "DataError",
    "Dataset",
    "DegenerateFoldError",
    "DegeneratePrevalenceError",
    "DegenerateSplitError",
    "EstimatingEquationError",
    "NuisanceFit",
    "PenalizedProblem",
    "PopulationConstants",
    "SingularMatrixError",
    "SolverDivergence",
    "SolverError",
    "SolverOptions",
    "TransferError",
    "cross_validate_lambda",
    "kkt_residual",
    "load_dataset",
    "population_constants",
    "solve_penalized",
    "write_dataset",
]
