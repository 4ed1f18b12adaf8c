#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Run manifests and artifact writers.

Every artifact a command writes embeds the run's manifest (command, inputs,
seed, overrides, effective configuration, versions). JSON artifacts carry it
under a ``"manifest"`` key; CSV artifacts carry it as a single leading
``# manifest: {...}`` comment line (read back with ``comment="#"``).
Manifests hold no timestamps, so re-running a command from its manifest
reproduces every file byte for byte; wall-clock times live only in the run
history.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
import scipy
import sklearn

TOOL_NAME = "transfer-accuracy-toolkit"
TOOL_VERSION = "1.0.0"

PathLike = Union[str, Path]


def version_stamp() -> Dict[str, str]:
    return {
        TOOL_NAME: TOOL_VERSION,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "scikit-learn": sklearn.__version__,
    }


@dataclass
class RunManifest:
    command: str
    seed: int
    output_dir: str
    dataset: Optional[str] = None
    simulation: Optional[Dict[str, Any]] = None
    overrides: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    versions: Dict[str, str] = field(default_factory=version_stamp)

    def __post_init__(self) -> None:
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not out.is_dir():
            raise OSError(f"output directory is not a directory: {out}")

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "dataset": self.dataset,
            "simulation": self.simulation,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "overrides": self.overrides,
            "config": self.config,
            "versions": self.versions,
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: PathLike, payload: Dict[str, Any], manifest: Optional[RunManifest] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    if manifest is not None:
        body["manifest"] = manifest.to_dict()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_jsonable(body), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


def write_csv(path: PathLike, frame: pd.DataFrame, manifest: Optional[RunManifest] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if manifest is not None:
            f.write("# manifest: " + json.dumps(_jsonable(manifest.to_dict()), sort_keys=True) + "\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
    return path


def write_curve_csv(path: PathLike, estimate, manifest: Optional[RunManifest] = None) -> Path:
    """One row per evaluation cutoff: ``c``, raw and post-processed FPR/TPR."""
    return write_csv(path, estimate.to_frame(), manifest)


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def write_error(output_dir: PathLike, error: BaseException, manifest: Optional[RunManifest] = None) -> Path:
    payload = {"error": type(error).__name__, "message": str(error)}
    row = getattr(error, "row", None)
    if row is not None:
        payload["row"] = row
    residual = getattr(error, "residual", None)
    if residual is not None:
        payload["residual"] = residual
    return write_json(Path(output_dir) / "error.json", payload, manifest)
