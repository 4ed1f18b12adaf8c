"""Synthetic source/target populations for the three misspecification settings.

Features are ``X = U`` with ``U_1 = 1`` and the remaining columns i.i.d.
standard normals truncated to ``(-2.5, 2.5)`` and affinely standardized. The
source indicator and the label are Bernoulli draws:

* outcome   ``P(Y=1 | x) = g(x'gamma0 + extra_y(x))``
* selection ``P(S=0 | x) / P(S=1 | x) = exp(x's0 + extra_s(x))``

Setting ``i`` has no extra terms (both working models correct), ``ii`` adds
``0.5 x2 x3 + 0.3 x4^2`` to the outcome (imputation model wrong) and ``iii``
adds ``0.4 x2^2 + 0.4 x3 x5`` to the selection (density-ratio model wrong).
Columns are 1-based as above; ``x5`` is the first adjustment covariate when
``q = 4``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import stats

from estimation.data import Dataset
from estimation.errors import DataError
from estimation.links import g
from orchestrator.parallel import stream

CONFIG_IDS = ("i", "ii", "iii")
TRUNCATION = 2.5
POOL_ROUNDS = 10

RISK_COEFS = (1.0, 0.5, -0.5, 0.5)
ADJUST_COEFS = (0.5, 0.5, 0.5)
SELECTION_INTERCEPT = math.log(5.0)
# (1-based column offset within W, coefficient); plus one risk-factor term on a_2.
SELECTION_RISK = ((2, 0.3),)
SELECTION_ADJUST = ((1, 0.4), (4, 0.3), (5, 0.3))

_TRUNC = stats.truncnorm(-TRUNCATION, TRUNCATION)
TRUNC_SD = float(_TRUNC.std())


@dataclass(frozen=True)
class SimConfig:
    config_id: str = "i"
    n: int = 600
    N: int = 3000
    p: int = 100
    q: int = 4
    reps: int = 200
    seed: int = 0
    n_min: int = 120
    B: int = 500
    truth_rows: int = 1_000_000
    risk_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.config_id not in CONFIG_IDS:
            raise ValueError(f"config_id must be one of {', '.join(CONFIG_IDS)}; got {self.config_id!r}")
        for name in ("n", "N", "q", "reps", "truth_rows"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.q < 4:
            raise ValueError("the generators need q >= 4 (intercept plus three risk factors)")
        if self.p < 5:
            raise ValueError("the generators need p >= 5 adjustment covariates")

    @property
    def is_full_scale(self) -> bool:
        return self.q == 4 and self.p in (100, 200)

    @property
    def active_columns(self) -> int:
        """Columns that enter the outcome or selection rules (the rest are noise)."""
        return self.q + max(len(ADJUST_COEFS), max(k for k, _ in SELECTION_ADJUST))

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["full_scale"] = self.is_full_scale
        return out


def generate_u(rows: int, p: int, q: int, seed: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """``rows`` draws of ``U``: intercept plus standardized truncated normals."""
    if rows < 1:
        raise ValueError("rows must be positive")
    rng = stream(seed, "u") if rng is None else rng
    width = p + q
    raw = _TRUNC.rvs(size=(rows, width - 1), random_state=rng)
    return np.column_stack([np.ones(rows), raw / TRUNC_SD])


def outcome_coefficients(cfg: SimConfig, width: int) -> np.ndarray:
    coef = np.zeros(width)
    coef[0] = RISK_COEFS[0]
    coef[1:4] = cfg.risk_scale * np.asarray(RISK_COEFS[1:])
    coef[cfg.q: cfg.q + len(ADJUST_COEFS)] = ADJUST_COEFS
    return coef


def selection_coefficients(cfg: SimConfig, width: int) -> np.ndarray:
    coef = np.zeros(width)
    coef[0] = SELECTION_INTERCEPT
    for col, value in SELECTION_RISK:
        coef[col - 1] = value
    for k, value in SELECTION_ADJUST:
        coef[cfg.q + k - 1] = value
    return coef


def outcome_logit(cfg: SimConfig, x: np.ndarray) -> np.ndarray:
    eta = x @ outcome_coefficients(cfg, x.shape[1])
    if cfg.config_id == "ii":
        eta = eta + 0.5 * x[:, 1] * x[:, 2] + 0.3 * x[:, 3] ** 2
    return eta


def selection_logit(cfg: SimConfig, x: np.ndarray) -> np.ndarray:
    """Log-odds of ``S = 0`` (target membership)."""
    eta = x @ selection_coefficients(cfg, x.shape[1])
    if cfg.config_id == "iii":
        eta = eta + 0.4 * x[:, 1] ** 2 + 0.4 * x[:, 2] * x[:, 4]
    return eta


def draw_population(cfg: SimConfig, rows: int, rng: np.random.Generator,
                    width: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``(x, s, y)`` for ``rows`` pooled units (``s`` is True for source)."""
    width = cfg.p + cfg.q if width is None else width
    x = generate_u(rows, width - cfg.q, cfg.q, cfg.seed, rng=rng)
    target = rng.random(rows) < g(selection_logit(cfg, x))
    y = (rng.random(rows) < g(outcome_logit(cfg, x))).astype(float)
    return x, ~target, y


@dataclass
class SimulatedSample:
    """A generated dataset plus what estimators must never see."""

    dataset: Dataset
    hidden_target_y: np.ndarray = field(repr=False)
    truth_flags: Dict[str, bool] = field(default_factory=dict)


def generate_dataset(cfg: SimConfig, rep: int) -> SimulatedSample:
    """Draw pools of ``2 (n + N)`` units until both partitions are full, then truncate."""
    rng = stream(cfg.seed, "rep", rep, "data")
    pool_rows = 2 * (cfg.n + cfg.N)
    sources, targets = [], []
    n_src = n_tgt = 0
    for _ in range(POOL_ROUNDS):
        x, s, y = draw_population(cfg, pool_rows, rng)
        sources.append((x[s], y[s]))
        targets.append((x[~s], y[~s]))
        n_src += int(s.sum())
        n_tgt += int((~s).sum())
        if n_src >= cfg.n and n_tgt >= cfg.N:
            break
    else:
        raise DataError(f"pool exhausted after {POOL_ROUNDS} rounds: {n_src} source / {n_tgt} target rows")

    source_x = np.vstack([x for x, _ in sources])[: cfg.n]
    source_y = np.concatenate([y for _, y in sources])[: cfg.n]
    target_x = np.vstack([x for x, _ in targets])[: cfg.N]
    target_y = np.concatenate([y for _, y in targets])[: cfg.N]
    dataset = Dataset(source_y, source_x, target_x, q=cfg.q, p=cfg.p)
    flags = {"density_ratio_correct": cfg.config_id != "iii", "imputation_correct": cfg.config_id != "ii"}
    return SimulatedSample(dataset=dataset, hidden_target_y=target_y, truth_flags=flags)
