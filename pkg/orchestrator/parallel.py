#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Worker pool and seeded random streams.

Every random draw in a run comes from ``stream(seed, *keys)``: a Philox
counter-based generator keyed by the master seed plus a component path
(``"cv"``, ``("bootstrap", b)``, ``("rep", r)``...). A component's draws do
not depend on which thread runs it or on how many other components ran
before it, so results are identical for any ``--threads`` value.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar, Union

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

Key = Union[int, str]


def _key_word(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be nonnegative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *(_key_word(k) for k in keys)])


def stream(seed: int, *keys: Key) -> np.random.Generator:
    """Independent generator for the component named by ``keys``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def sub_seed(seed: int, *keys: Key) -> int:
    """A 32-bit integer seed for APIs that take ``random_state`` (KFold)."""
    return int(seed_sequence(seed, *keys).generate_state(1)[0])


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """``[fn(x) for x in items]`` on up to ``threads`` workers, in input order.

    The first exception raised by ``fn`` propagates to the caller.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def mapper(threads: int) -> Callable[[Callable, Iterable], List]:
    """``parallel_map`` bound to a thread count, for APIs that take a ``mapper``."""
    return lambda fn, items: parallel_map(fn, items, threads)
