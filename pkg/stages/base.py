#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Base class for pipeline stages.
The fit pipeline and the benchmark repetition runner inherit from this.
"""

from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List, Optional
import sys
import threading
import time

from orchestrator.parallel import parallel_map

BatchCallback = Callable[[Dict[str, Any], Dict[str, Any], int], None]


class BaseStage(ABC):
    """
    Abstract base class for processing stages.

    A stage owns one step of a run and reports through ``[name]`` prefixed
    console lines. ``process`` handles one item; ``process_batch`` runs many,
    optionally on a thread pool, and turns per-item exceptions into error
    results.
    """

    #: emit a progress line every this many finished items (and on the last)
    progress_every = 10

    def __init__(self, config=None, quiet: bool = False):
        """
        Args:
            config: ConfigManager instance (or None for defaults)
            quiet: suppress progress and info lines; errors still reach stderr
        """
        self.config = config
        self.quiet = quiet
        self._start_time: Optional[float] = None

    @property
    @abstractmethod
    def name(self) -> str:
        """Stage name identifier"""

    @abstractmethod
    def process(self, item: Dict[str, Any]) -> Dict[str, Any]:
        """Process one item; the result carries ``id`` and ``status``."""

    def _safe_process(self, item: Dict[str, Any]) -> Dict[str, Any]:
        try:
            return self.process(item)
        except Exception as e:
            self.log_error(f"item {item.get('id')}: {e}")
            return {"id": item.get("id"), "status": "error", "error": f"{type(e).__name__}: {e}"}

    def process_batch(self, items: List[Dict[str, Any]], callback: Optional[BatchCallback] = None,
                      threads: int = 1) -> Dict[str, Any]:
        """
        Run every item, counting failures instead of stopping on them.

        Results (and callback calls) follow input order whatever ``threads``
        is. Returns ``{"total", "success", "failed", "items", "duration"}``.
        """
        self._start_time = time.time()
        total = len(items)
        finished = 0
        lock = threading.Lock()

        def run(indexed):
            nonlocal finished
            i, item = indexed
            result = self._safe_process(item)
            with lock:
                finished += 1
                if finished % self.progress_every == 0 or finished == total:
                    self.log_progress(finished, total, str(item.get("id", i)))
            return result

        outputs = parallel_map(run, list(enumerate(items)), threads)

        success = sum(1 for r in outputs if r.get("status") == "success")
        if callback:
            for i, (item, result) in enumerate(zip(items, outputs)):
                callback(item, result, i)
        return {
            "total": total,
            "success": success,
            "failed": total - success,
            "items": outputs,
            "duration": time.time() - self._start_time,
        }

    def log(self, message: str) -> None:
        if not self.quiet:
            print(f"[{self.name}] {message}")

    def log_error(self, message: str) -> None:
        print(f"[{self.name}] ERROR: {message}", file=sys.stderr)

    def log_progress(self, current: int, total: int, item_name: str = "") -> None:
        """``[current/total] (pct%) item ETA`` based on the mean time per finished item."""
        percent = (current / total * 100) if total > 0 else 0
        elapsed = time.time() - self._start_time if self._start_time else 0.0
        eta = f"ETA: {elapsed / current * (total - current):.0f}s" if elapsed > 0 and current < total else ""
        self.log(f"[{current}/{total}] ({percent:.0f}%) {item_name} {eta}".rstrip())
