# mocr/elo.py
"""Elo ratings over pairwise battles: expected score, update, replay and bootstrap.

    E_A  = 1 / (1 + 10^((R_B - R_A) / scale))
    R_A' = R_A + K * (S_A - E_A)
    R_B' = R_B + K * ((1 - S_A) - (1 - E_A))

Bootstrap shuffles the whole battle history (a permutation, not a resample with
replacement) once per iteration and replays it from fresh ratings. Iteration i
draws its permutation from the i-th child of SeedSequence(seed) through PCG64,
so results do not depend on how iterations are scheduled.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from mocr.errors import EloInputError

logger = logging.getLogger(__name__)

LEGAL_SCORES = (0.0, 0.5, 1.0)

RatingTable = Dict[str, float]


@dataclass(frozen=True)
class EloConfig:
    initial_rating: float = 1000.0
    k_factor: float = 32.0
    scale: float = 400.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.initial_rating, self.k_factor, self.scale)):
            raise EloInputError("Elo parameters must be finite")
        if self.k_factor <= 0:
            raise EloInputError(f"k_factor must be > 0 (got {self.k_factor})")
        if self.scale <= 0:
            raise EloInputError(f"scale must be > 0 (got {self.scale})")


@dataclass(frozen=True)
class BattleOutcome:
    model_a: str
    model_b: str
    score_a: float

    def __post_init__(self) -> None:
        if self.model_a == self.model_b:
            raise EloInputError(f"a model cannot battle itself ({self.model_a})")
        _check_score(self.score_a)


def _check_score(score: float) -> None:
    if score not in LEGAL_SCORES:
        raise EloInputError(f"score must be one of 0, 0.5, 1 (got {score!r})")


def expected_score(r_a: float, r_b: float, scale: float = 400.0) -> float:
    if not (math.isfinite(r_a) and math.isfinite(r_b)):
        raise EloInputError("ratings must be finite")
    if not (math.isfinite(scale) and scale > 0):
        raise EloInputError("scale must be finite and > 0")
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / scale))


def update(r_a: float, r_b: float, score_a: float, config: EloConfig = EloConfig()) -> Tuple[float, float]:
    _check_score(score_a)
    e_a = expected_score(r_a, r_b, config.scale)
    k = config.k_factor
    return r_a + k * (score_a - e_a), r_b + k * ((1.0 - score_a) - (1.0 - e_a))


def replay(
    battles: Iterable[BattleOutcome],
    config: EloConfig = EloConfig(),
    models: Iterable[str] = (),
) -> RatingTable:
    """Apply battles strictly in order. Unseen models start at initial_rating."""
    ratings: RatingTable = {m: config.initial_rating for m in models}
    for b in battles:
        r_a = ratings.setdefault(b.model_a, config.initial_rating)
        r_b = ratings.setdefault(b.model_b, config.initial_rating)
        ratings[b.model_a], ratings[b.model_b] = update(r_a, r_b, b.score_a, config)
    return ratings


# =========================
# Bootstrap
# =========================
@dataclass(frozen=True)
class ModelStats:
    mean: float
    std: float
    low: float   # 2.5th percentile
    high: float  # 97.5th percentile

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class BootstrapResult:
    stats: Mapping[str, ModelStats]
    iterations: int
    seed: int
    samples: Mapping[str, Tuple[float, ...]] = field(default_factory=dict, repr=False, compare=False)

    def ranked(self) -> List[Tuple[str, ModelStats]]:
        """Models by mean rating, best first; ties broken by name."""
        return sorted(self.stats.items(), key=lambda kv: (-kv[1].mean, kv[0]))

    def to_dict(self) -> Dict[str, object]:
        return {
            "iterations": self.iterations,
            "seed": self.seed,
            "models": {m: s.to_dict() for m, s in sorted(self.stats.items())},
        }


def iteration_orders(n: int, iterations: int, seed: int) -> Iterator[np.ndarray]:
    """The permutation of range(n) used by each bootstrap iteration, in order."""
    for child in np.random.SeedSequence(seed).spawn(iterations):
        yield np.random.Generator(np.random.PCG64(child)).permutation(n)


def _summarize(values: np.ndarray) -> ModelStats:
    mean = float(values.mean())
    low, high = (float(v) for v in np.percentile(values, [2.5, 97.5]))
    # percentile interpolation can land a hair past the mean on skewed samples
    return ModelStats(mean=mean, std=float(values.std()), low=min(low, mean), high=max(high, mean))


def bootstrap(
    battles: Sequence[BattleOutcome],
    config: EloConfig = EloConfig(),
    iterations: int = 1000,
    seed: int = 0,
    models: Iterable[str] = (),
    progress: bool = False,
) -> BootstrapResult:
    if iterations < 1:
        raise EloInputError(f"iterations must be >= 1 (got {iterations})")
    battles = list(battles)
    names = sorted({*models, *(b.model_a for b in battles), *(b.model_b for b in battles)})
    finals: Dict[str, List[float]] = {m: [] for m in names}

    orders = iteration_orders(len(battles), iterations, seed)
    for order in tqdm(orders, total=iterations, desc="bootstrap", disable=not progress, leave=False):
        ratings = replay((battles[i] for i in order), config, names)
        for m in names:
            finals[m].append(ratings[m])

    samples = {m: tuple(v) for m, v in finals.items()}
    stats = {m: _summarize(np.asarray(v, dtype=float)) for m, v in finals.items()}
    logger.debug("bootstrap: %d iterations over %d battles, %d models", iterations, len(battles), len(names))
    return BootstrapResult(stats=stats, iterations=iterations, seed=seed, samples=samples)
