#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Append-only log of CLI runs (``state/run_history.json`` by default).

One record per command invocation, successful or not. Wall-clock time is
recorded here and nowhere else, so the artifacts in an output directory stay
byte-reproducible from their manifests.

    {
        "timestamp": "2026-06-29T12:34:56",
        "command":   "roc",
        "seed":      7,
        "output":    "outputs/run1",
        "outcome":   "ok",                 # ok | error
        "error":     null,                 # exception class name on failure
        "artifacts": ["beta.json", "nuisance_meta.json", "roc_curve.csv", ...]
    }

The list keeps the newest ``MAX_RECORDS`` entries.
"""

from __future__ import annotations

import json
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

DEFAULT_PATH = "state/run_history.json"
MAX_RECORDS = 1000
OUTCOMES = ("ok", "error")


def read_history(path: str = DEFAULT_PATH) -> List[Dict[str, Any]]:
    """All records, oldest first. A missing, unreadable or non-list file reads as empty."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return []
    return [r for r in data if isinstance(r, dict)] if isinstance(data, list) else []


def make_record(command: str, seed: Optional[int], output: str, outcome: str,
                artifacts: Sequence[str] = (), error: Optional[str] = None) -> Dict[str, Any]:
    if outcome not in OUTCOMES:
        raise ValueError(f"outcome must be one of {OUTCOMES}, got {outcome!r}")
    return {
        "timestamp": datetime.now().isoformat(timespec="seconds"),
        "command": command,
        "seed": seed,
        "output": str(output),
        "outcome": outcome,
        "error": error,
        "artifacts": [Path(a).name for a in artifacts],
    }


def append_run(record: Dict[str, Any], path: str = DEFAULT_PATH) -> Dict[str, Any]:
    """Add ``record`` and rewrite the file through a sibling temp file."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    records = (read_history(path) + [record])[-MAX_RECORDS:]
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(json.dumps(records, indent=2, ensure_ascii=False), encoding="utf-8")
    os.replace(tmp, target)
    return record


def last_run(path: str = DEFAULT_PATH, command: Optional[str] = None) -> Optional[Dict[str, Any]]:
    """Newest record, optionally restricted to one command; ``None`` when there is none."""
    for record in reversed(read_history(path)):
        if command is None or record.get("command") == command:
            return record
    return None
