"""Frequency oracles: estimated popularity ``EstP(pw)`` of a password.

Three backends share one interface (``estimate_popularity`` and the
vectorized ``estimate_many``):

* :class:`ExactOracle` reads the empirical distribution directly.
* :class:`SketchOracle` divides a (possibly private) sketch estimate by the
  sketch's total frequency.
* :class:`ModelOracle` turns guess numbers from a strength model into
  probabilities, ``(1/g) / Z``, where ``Z`` normalizes the most guessable
  entries to sum to one.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Distribution
from .errors import GuessTableError, SketchError
from .sketch import CountSketch

# Entries (smallest guess numbers first) that the model normalizer covers.
NORMALIZE_TOP = 10_000


class ExactOracle:
    """Perfect knowledge of the password distribution."""

    kind = "exact"

    def __init__(self, dist: Distribution) -> None:
        self.dist = dist

    def estimate_popularity(self, pw: str) -> float:
        return self.dist.p(pw)

    def estimate_many(self, passwords: Sequence[str]) -> np.ndarray:
        p = self.dist.p
        return np.fromiter((p(pw) for pw in passwords), dtype=np.float64, count=len(passwords))


class SketchOracle:
    """Popularity read from a count sketch. Estimates are memoized."""

    kind = "sketch"

    def __init__(self, sketch: CountSketch) -> None:
        if sketch.total_freq() <= 0:
            raise SketchError(f"sketch total frequency {sketch.total_freq()} is not positive")
        self.sketch = sketch
        self._memo: dict[str, float] = {}

    def estimate_popularity(self, pw: str) -> float:
        value = self._memo.get(pw)
        if value is None:
            value = self.sketch.estimated_probability(pw)
            self._memo[pw] = value
        return value

    def estimate_many(self, passwords: Sequence[str]) -> np.ndarray:
        return self.sketch.estimated_probabilities(passwords)


@dataclass
class GuessTable:
    """Guess numbers per password, with the normalizer over the top entries."""

    guesses: dict[str, float]
    normalizer: float = field(init=False)

    def __post_init__(self) -> None:
        if not self.guesses:
            raise GuessTableError("guess table is empty")
        bad = [pw for pw, g in self.guesses.items() if not g >= 1]
        if bad:
            raise GuessTableError(f"guess number for {bad[0]!r} must be >= 1")
        smallest = np.sort(np.fromiter(self.guesses.values(), dtype=np.float64))[:NORMALIZE_TOP]
        self.normalizer = math.fsum((1.0 / smallest).tolist())

    def __len__(self) -> int:
        return len(self.guesses)

    def top(self, n: int = NORMALIZE_TOP) -> list[str]:
        """Passwords with the ``n`` smallest guess numbers (ties by string)."""
        return sorted(self.guesses, key=lambda pw: (self.guesses[pw], pw))[:n]


class ModelOracle:
    """Popularity derived from guess numbers; unknown strings get ``floor``."""

    kind = "model"

    def __init__(self, table: GuessTable, floor: float = 0.0) -> None:
        if not 0.0 <= floor <= 1.0:
            raise GuessTableError(f"floor must lie in [0, 1], got {floor}")
        self.table = table
        self.floor = floor

    def estimate_popularity(self, pw: str) -> float:
        g = self.table.guesses.get(pw)
        if g is None:
            return self.floor
        return min(1.0, (1.0 / g) / self.table.normalizer)

    def estimate_many(self, passwords: Sequence[str]) -> np.ndarray:
        est = self.estimate_popularity
        return np.fromiter((est(pw) for pw in passwords), dtype=np.float64, count=len(passwords))


FrequencyOracle = ExactOracle | SketchOracle | ModelOracle


def oracle_exact(dist: Distribution) -> ExactOracle:
    return ExactOracle(dist)


def oracle_from_sketch(sketch: CountSketch) -> SketchOracle:
    return SketchOracle(sketch)


def oracle_from_model(table: GuessTable, floor: float = 0.0) -> ModelOracle:
    return ModelOracle(table, floor)


def estimate_popularity(oracle: FrequencyOracle, pw: str) -> float:
    return oracle.estimate_popularity(pw)


def load_guess_table(path: str | Path) -> GuessTable:
    """Read ``pw<TAB>guess_number`` lines."""
    guesses: dict[str, float] = {}
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw[:-1] if raw.endswith("\n") else raw
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GuessTableError(f"expected 'pw<TAB>guess_number', got {line!r}", lineno)
            pw, text = parts
            try:
                g = float(text)
            except ValueError:
                raise GuessTableError(f"guess number {text!r} is not a number", lineno) from None
            if not g >= 1 or math.isinf(g):
                raise GuessTableError(f"guess number must be a finite value >= 1, got {text}", lineno)
            if pw in guesses:
                raise GuessTableError(f"duplicate password {pw!r}", lineno)
            guesses[pw] = g
    return GuessTable(guesses)


def min_combine(tables: Iterable[GuessTable]) -> GuessTable:
    """Per-password minimum guess number across models."""
    tables = list(tables)
    if not tables:
        raise GuessTableError("min_combine needs at least one table")
    merged: dict[str, float] = {}
    for table in tables:
        for pw, g in table.guesses.items():
            current = merged.get(pw)
            if current is None or g < current:
                merged[pw] = g
    return GuessTable(merged)
