"""Test helpers: small synthetic source/target samples and their CSV files.

Everything is drawn from a seeded numpy generator, so each helper returns the
same data on every call with the same arguments.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from estimation.data import Dataset, write_dataset
from estimation.links import g

RISK_COEF = (-0.3, 0.8, -0.6)


def make_features(rows: int, q: int, p: int, rng: np.random.Generator) -> np.ndarray:
    return np.column_stack([np.ones(rows), rng.standard_normal((rows, q + p - 1))])


def make_dataset(n: int = 200, N: int = 400, q: int = 3, p: int = 6, seed: int = 0,
                 shift: float = 0.5, coef: Optional[Sequence[float]] = None) -> Dataset:
    """Source/target sample with covariate shift along ``w_1`` and ``a_2``.

    Target rows have ``w_1`` and ``a_2`` shifted by ``shift``; labels follow a
    logistic model in the risk factors plus ``0.5 w_1``.
    """
    rng = np.random.default_rng(seed)
    coef = np.asarray(RISK_COEF if coef is None else coef, dtype=float)[:q]
    source_x = make_features(n, q, p, rng)
    target_x = make_features(N, q, p, rng)
    if q > 1:
        target_x[:, 1] += shift
    if p > 0:
        target_x[:, q] += shift
    eta = source_x[:, :q] @ coef
    if p > 0:
        eta = eta + 0.5 * source_x[:, q]
    source_y = (rng.random(n) < g(eta)).astype(float)
    return Dataset(source_y, source_x, target_x, q=q, p=p)


def make_mirrored_dataset(n: int = 300, q: int = 2, p: int = 3, seed: int = 0) -> Dataset:
    """Target rows are an exact copy of the source rows (no shift, ``N = n``)."""
    rng = np.random.default_rng(seed)
    x = make_features(n, q, p, rng)
    y = (rng.random(n) < g(x[:, :q] @ np.asarray(RISK_COEF[:q]))).astype(float)
    return Dataset(y, x, x.copy(), q=q, p=p)


def write_dataset_csv(tmp_path: Path, d: Optional[Dataset] = None, name: str = "data.csv") -> Path:
    return write_dataset(d if d is not None else make_dataset(), Path(tmp_path) / name)


def write_text_csv(tmp_path: Path, text: str, name: str = "data.csv") -> Path:
    path = Path(tmp_path) / name
    path.write_text(text, encoding="utf-8")
    return path


def write_config(tmp_path: Path, extra: str = "") -> Path:
    """YAML config that keeps run history inside ``tmp_path`` and stays fast."""
    path = Path(tmp_path) / "config.yaml"
    path.write_text(
        "tuning:\n"
        "  cv_folds: 3\n"
        "  lambda_grid_size: 4\n"
        "  kappa_grid: [1.0]\n"
        "bootstrap:\n"
        "  B: 100\n"
        "run:\n"
        f"  output: {(Path(tmp_path) / 'out').as_posix()}\n"
        f"  history: {(Path(tmp_path) / 'history.json').as_posix()}\n"
        + extra,
        encoding="utf-8",
    )
    return path
