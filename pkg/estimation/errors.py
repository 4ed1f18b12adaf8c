"""Exception hierarchy for the transfer-accuracy toolkit.

Every failure the estimation pipeline can anticipate derives from
:class:`TransferError`, so the CLI can turn any of them into a structured
``error.json`` and a non-zero exit code without catching bare ``Exception``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np


class TransferError(Exception):
    """Base class for anticipated estimation failures."""


class DataError(TransferError):
    """Raised when an input file or in-memory dataset violates the data model.

    ``row`` is the 0-based data row (header excluded) when the problem can be
    pinned to one row, else ``None``.
    """

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row} (line {row + 2}): {message}"
        super().__init__(message)
        self.row = row


class SolverError(TransferError):
    """A penalized fit did not reach its KKT tolerance within ``max_iter``."""

    def __init__(self, message: str, coef: Optional[np.ndarray] = None,
                 residual: float = float("nan")):
        super().__init__(message)
        self.coef = coef
        self.residual = residual


class SolverDivergence(SolverError):
    """The objective is unbounded below along some direction (separation)."""

    def __init__(self, loss_kind: str, coef: Optional[np.ndarray] = None):
        super().__init__(f"{loss_kind} objective diverged (unbounded along a direction)",
                         coef=coef)
        self.loss_kind = loss_kind


class DegenerateFoldError(TransferError):
    """A cross-validation fold kept degenerate responses after one re-draw."""


class DegenerateSplitError(TransferError):
    """A sign group of the calibration weights is too small to calibrate on."""


class CalibrationError(TransferError):
    """A cutoff calibration has too few effective source rows."""


class EstimatingEquationError(TransferError):
    """Damped Newton failed to find a root of the estimating equation."""


class SingularMatrixError(EstimatingEquationError):
    """The information matrix is not positive definite."""


class DegeneratePrevalenceError(TransferError):
    """TP(-inf) or FP(-inf) is too close to zero to normalize a rate."""


class BootstrapError(TransferError):
    """Too many bootstrap replicates failed."""


class BenchmarkError(TransferError):
    """Too many benchmark repetitions failed."""
