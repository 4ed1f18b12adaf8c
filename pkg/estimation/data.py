"""Source/target cohorts, their feature layout, and CSV interchange.

A :class:`Dataset` holds the labeled source rows ``(y, x)`` and the unlabeled
target rows ``x``. The feature matrix is ``x = (A, W)``: the leading ``q``
columns are the risk factors ``A`` (the first one is an intercept that is
always synthesized, never read) and the trailing ``p`` columns are the
adjustment covariates ``W``.

Canonical CSV layout::

    s,y,a_2,...,a_q,w_1,...,w_p
    1,0,0.31,...      <- source row (s=1), label required
    0,,1.20,...       <- target row (s=0), label empty

``s`` partitions the rows; ``y`` may be empty on target rows only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DataError

INDICATOR_COLUMN = "s"
LABEL_COLUMN = "y"
RISK_PREFIX = "a_"
ADJUST_PREFIX = "w_"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ColumnLayout:
    """Maps CSV columns to roles. Intercept is implicit (never a column)."""

    indicator: str = INDICATOR_COLUMN
    label: str = LABEL_COLUMN
    risk: Tuple[str, ...] = ()
    adjust: Tuple[str, ...] = ()

    @classmethod
    def from_header(cls, columns: Sequence[str]) -> "ColumnLayout":
        """Infer the canonical layout: ``a_*`` risk factors, ``w_*`` adjusters."""
        risk = tuple(c for c in columns if c.startswith(RISK_PREFIX))
        adjust = tuple(c for c in columns if c.startswith(ADJUST_PREFIX))
        return cls(risk=risk, adjust=adjust)

    @property
    def q(self) -> int:
        return len(self.risk) + 1

    @property
    def p(self) -> int:
        return len(self.adjust)


@dataclass(frozen=True)
class PopulationConstants:
    """``rho_n = (N+n)/n``, ``rho_N = (N+n)/N`` and ``rho2 = n/N``."""

    rho_n: float
    rho_N: float
    rho2: float


@dataclass(frozen=True)
class Dataset:
    """Immutable source/target sample. Safe to share across worker threads."""

    source_y: np.ndarray
    source_x: np.ndarray
    target_x: np.ndarray
    q: int
    p: int
    feature_names: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        source_y = np.array(self.source_y, dtype=float)
        source_x = np.array(self.source_x, dtype=float)
        target_x = np.array(self.target_x, dtype=float)
        for name, arr in (("source_y", source_y), ("source_x", source_x), ("target_x", target_x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

        if self.q < 1 or self.p < 0:
            raise DataError(f"need q >= 1 and p >= 0, got q={self.q}, p={self.p}")
        width = self.q + self.p
        if source_x.ndim != 2 or target_x.ndim != 2:
            raise DataError("feature matrices must be two-dimensional")
        if source_x.shape[1] != width or target_x.shape[1] != width:
            raise DataError(
                f"expected {width} feature columns, got source={source_x.shape[1]}, "
                f"target={target_x.shape[1]}"
            )
        if source_y.shape != (source_x.shape[0],):
            raise DataError("source_y length does not match source_x rows")
        if source_x.shape[0] < 2:
            raise DataError("empty source partition" if source_x.shape[0] == 0
                            else "source partition needs at least 2 rows")
        if target_x.shape[0] < 2:
            raise DataError("empty target partition" if target_x.shape[0] == 0
                            else "target partition needs at least 2 rows")
        for name, arr in (("source_y", source_y), ("source_x", source_x), ("target_x", target_x)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite entries")
        bad = np.flatnonzero((source_y != 0.0) & (source_y != 1.0))
        if bad.size:
            raise DataError(f"label {source_y[bad[0]]!r} outside {{0,1}}", row=int(bad[0]))
        if not (np.all(source_x[:, 0] == 1.0) and np.all(target_x[:, 0] == 1.0)):
            raise DataError("first feature column must be the intercept (identically 1)")
        if not self.feature_names:
            names = ["intercept"] + [f"a_{k}" for k in range(2, self.q + 1)]
            names += [f"w_{k}" for k in range(1, self.p + 1)]
            object.__setattr__(self, "feature_names", tuple(names))

    # ------------------------------------------------------------------ #
    @property
    def n(self) -> int:
        return self.source_x.shape[0]

    @property
    def N(self) -> int:
        return self.target_x.shape[0]

    @property
    def width(self) -> int:
        return self.q + self.p

    @property
    def source_a(self) -> np.ndarray:
        return self.source_x[:, : self.q]

    @property
    def target_a(self) -> np.ndarray:
        return self.target_x[:, : self.q]

    @property
    def pooled_x(self) -> np.ndarray:
        """Source rows stacked over target rows (the pooled row order)."""
        return np.vstack([self.source_x, self.target_x])

    @property
    def pooled_a(self) -> np.ndarray:
        return self.pooled_x[:, : self.q]

    @property
    def source_mask(self) -> np.ndarray:
        """Boolean S indicator in pooled row order."""
        return np.concatenate([np.ones(self.n, dtype=bool), np.zeros(self.N, dtype=bool)])

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, N={self.N}, q={self.q}, p={self.p})"


def population_constants(d: Dataset) -> PopulationConstants:
    total = d.N + d.n
    return PopulationConstants(rho_n=total / d.n, rho_N=total / d.N, rho2=d.n / d.N)


def require_label_variation(d: Dataset) -> None:
    """Raise unless the source labels contain both classes."""
    if np.all(d.source_y == d.source_y[0]):
        raise DataError(f"degenerate labels: every source label is {int(d.source_y[0])}")


# --------------------------------------------------------------------------- #
# CSV ingestion
# --------------------------------------------------------------------------- #
def _parse_cells(cells: np.ndarray, column: str, rows: np.ndarray) -> np.ndarray:
    """Parse string cells to floats, naming the first offending data row."""
    values = np.empty(cells.shape[0], dtype=float)
    for k, text in enumerate(cells):
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"column {column!r}: cannot parse {text!r}", row=int(rows[k]))
        if not math.isfinite(value):
            raise DataError(f"column {column!r}: non-finite value {text!r}", row=int(rows[k]))
        values[k] = value
    return values


def standardize_adjusters(source_x: np.ndarray, target_x: np.ndarray, q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Center/scale the adjustment columns by their pooled mean and sd.

    Risk-factor columns (and the intercept) are left raw. A constant column is
    only centered.
    """
    if source_x.shape[1] == q:
        return source_x, target_x
    pooled = np.vstack([source_x[:, q:], target_x[:, q:]])
    mean = pooled.mean(axis=0)
    sd = pooled.std(axis=0)
    sd[sd == 0.0] = 1.0
    source_x = source_x.copy()
    target_x = target_x.copy()
    source_x[:, q:] = (source_x[:, q:] - mean) / sd
    target_x[:, q:] = (target_x[:, q:] - mean) / sd
    return source_x, target_x


def load_dataset(path: PathLike, layout: Optional[ColumnLayout] = None,
                 standardize: bool = True) -> Dataset:
    """Read a header CSV into a validated :class:`Dataset`.

    Raises :class:`DataError` for a malformed cell (with its row), a label
    outside ``{0,1}``, a missing source label, or an empty partition.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"could not parse {path.name}: {exc}") from exc
    frame.columns = [c.strip() for c in frame.columns]
    layout = layout or ColumnLayout.from_header(list(frame.columns))

    needed = [layout.indicator, layout.label, *layout.risk, *layout.adjust]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise DataError(f"missing columns: {', '.join(missing)}")

    rows = np.arange(len(frame))
    cells = frame[needed].apply(lambda col: col.str.strip())
    indicator = _parse_cells(cells[layout.indicator].to_numpy(), layout.indicator, rows)
    bad = np.flatnonzero((indicator != 0.0) & (indicator != 1.0))
    if bad.size:
        raise DataError(f"indicator {layout.indicator!r} must be 0 or 1", row=int(bad[0]))
    is_source = indicator == 1.0
    if not is_source.any():
        raise DataError("empty source partition")
    if is_source.all():
        raise DataError("empty target partition")

    label_cells = cells[layout.label].to_numpy()
    source_rows = rows[is_source]
    empty = np.flatnonzero(label_cells[is_source] == "")
    if empty.size:
        raise DataError("missing label in source partition", row=int(source_rows[empty[0]]))
    labels = _parse_cells(label_cells[is_source], layout.label, source_rows)
    bad = np.flatnonzero((labels != 0.0) & (labels != 1.0))
    if bad.size:
        raise DataError(f"label {label_cells[is_source][bad[0]]!r} outside {{0,1}}",
                        row=int(source_rows[bad[0]]))

    feature_cols: List[np.ndarray] = [np.ones(len(frame))]
    for column in (*layout.risk, *layout.adjust):
        feature_cols.append(_parse_cells(cells[column].to_numpy(), column, rows))
    x = np.column_stack(feature_cols)

    source_x, target_x = x[is_source], x[~is_source]
    if standardize:
        source_x, target_x = standardize_adjusters(source_x, target_x, layout.q)
    names = ("intercept", *layout.risk, *layout.adjust)
    return Dataset(labels, source_x, target_x, q=layout.q, p=layout.p, feature_names=names)


def write_dataset(d: Dataset, path: PathLike) -> Path:
    """Write ``d`` in the canonical CSV layout (intercept column omitted).

    Floats are written with ``repr`` precision so a reload with
    ``standardize=False`` reproduces the matrices bitwise.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(d.feature_names[1:])
    source = pd.DataFrame(d.source_x[:, 1:], columns=names)
    source.insert(0, LABEL_COLUMN, d.source_y.astype(int).astype(str))
    source.insert(0, INDICATOR_COLUMN, "1")
    target = pd.DataFrame(d.target_x[:, 1:], columns=names)
    target.insert(0, LABEL_COLUMN, "")
    target.insert(0, INDICATOR_COLUMN, "0")
    frame = pd.concat([source, target], ignore_index=True)
    for column in names:
        frame[column] = [repr(float(v)) for v in frame[column]]
    frame.to_csv(path, index=False)
    return path
