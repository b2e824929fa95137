"""Count-median sketch with an optional Laplace privacy transform.

The sketch keeps a ``d x w`` table of signed counters and a total counter.
Row ``i`` hashes a password to a column with ``h_i``; a single sign hash
``h_pm`` (shared by all rows) decides whether the password adds +1 or -1.
The frequency estimate is the median over rows of ``table[i, h_i(pw)] * h_pm(pw)``.

Hashing is two-stage: a password is first reduced to a fixed 64-bit
fingerprint, then every hash is a vector multiply-shift function
``((a0*x0 + a1*x1 + b) mod 2**64) >> 32`` over the fingerprint's two 32-bit
halves, which is strongly universal. ``(a0, a1, b)`` per hash come from
the sketch seed, so ``(seed, d, w)`` fixes the whole family.

Privatization adds Laplace noise of scale ``(d + 1) / epsilon`` to every
cell and to the total: one password touches ``d`` cells and the total, so
the L1 sensitivity is ``d + 1``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .errors import SketchError

_MASK64 = (1 << 64) - 1
_MAGIC = b"DALKCS"
_VERSION = 1
_HEADER = struct.Struct("<6sHIIQBddc")
# Cells are 4 bytes: d=5, w=10**6 costs 20 MB.
_MAX_CELLS = 1 << 34


def fingerprint(pw: str) -> int:
    """Stable 64-bit fingerprint of a password (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.blake2b(pw.encode("utf-8"), digest_size=8).digest(), "little")


def fingerprints(passwords: Iterable[str]) -> np.ndarray:
    return np.fromiter((fingerprint(pw) for pw in passwords), dtype=np.uint64)


class HashFamily:
    """Seeded row hashes ``h_1..h_d`` into ``[0, w)`` and one sign hash."""

    def __init__(self, d: int, w: int, seed: int) -> None:
        self.d = d
        self.w = w
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5CE7C4,)))
        params = rng.integers(0, 2**64, size=(d + 1, 3), dtype=np.uint64, endpoint=False)
        self._params = params
        self._py_params = [tuple(int(v) for v in row) for row in params]

    @staticmethod
    def _mix(a0: int, a1: int, b: int, key: int) -> int:
        return (((a0 * (key & 0xFFFFFFFF) + a1 * (key >> 32) + b) & _MASK64) >> 32)

    def columns(self, key: int) -> list[int]:
        w = self.w
        return [(self._mix(*self._py_params[i], key) * w) >> 32 for i in range(self.d)]

    def sign(self, key: int) -> int:
        return 1 if self._mix(*self._py_params[self.d], key) >> 31 else -1

    def columns_many(self, keys: np.ndarray) -> np.ndarray:
        """Column indices, shape ``(d, len(keys))``."""
        lo = keys & np.uint64(0xFFFFFFFF)
        hi = keys >> np.uint64(32)
        out = np.empty((self.d, keys.shape[0]), dtype=np.int64)
        w = np.uint64(self.w)
        for i in range(self.d):
            a0, a1, b = self._params[i]
            h = (a0 * lo + a1 * hi + b) >> np.uint64(32)
            out[i] = ((h * w) >> np.uint64(32)).astype(np.int64)
        return out

    def signs_many(self, keys: np.ndarray) -> np.ndarray:
        lo = keys & np.uint64(0xFFFFFFFF)
        hi = keys >> np.uint64(32)
        a0, a1, b = self._params[self.d]
        h = (a0 * lo + a1 * hi + b) >> np.uint64(32)
        return np.where(h >> np.uint64(31), 1, -1).astype(np.int64)


class CountSketch:
    """Count (median) sketch over password strings.

    Mutating operations return ``self`` so calls can be chained.
    """

    def __init__(self, d: int, w: int, seed: int = 0) -> None:
        if d < 1 or w < 1:
            raise SketchError(f"need d >= 1 and w >= 1, got d={d}, w={w}")
        if w >= 1 << 32:
            raise SketchError(f"width {w} exceeds the 32-bit hash range")
        if d * w > _MAX_CELLS:
            raise SketchError(f"{d}x{w} table exceeds addressable memory")
        try:
            self.table = np.zeros((d, w), dtype=np.int32)
        except MemoryError:
            raise SketchError(f"cannot allocate a {d}x{w} table") from None
        self.d = d
        self.w = w
        self.seed = seed
        self.total: float = 0
        self.privatized = False
        self.epsilon: float | None = None
        self.hashes = HashFamily(d, w, seed)

    def __repr__(self) -> str:
        tag = f", epsilon={self.epsilon}" if self.privatized else ""
        return f"CountSketch(d={self.d}, w={self.w}, seed={self.seed}, total={self.total}{tag})"

    @property
    def nbytes(self) -> int:
        return self.table.nbytes

    def _require_mutable(self, op: str) -> None:
        if self.privatized:
            raise SketchError(f"cannot {op} after privatization")

    def _update(self, pw: str, delta: int) -> None:
        key = fingerprint(pw)
        sign = self.hashes.sign(key) * delta
        for row, col in enumerate(self.hashes.columns(key)):
            self.table[row, col] += sign

    def add(self, pw: str, count: int = 1) -> CountSketch:
        self._require_mutable("add")
        if count < 0:
            raise SketchError("count must be nonnegative")
        if self.total + count >= 2**31:
            raise SketchError("total would overflow 32-bit counters")
        self._update(pw, count)
        self.total += count
        return self

    def remove(self, pw: str, count: int = 1) -> CountSketch:
        self._require_mutable("remove")
        if count < 0:
            raise SketchError("count must be nonnegative")
        if self.total - count < 0:
            raise SketchError("remove would make the total negative")
        self._update(pw, -count)
        self.total -= count
        return self

    def add_many(self, passwords: Sequence[str], counts: Sequence[int] | np.ndarray | None = None) -> CountSketch:
        """Add each password ``counts[i]`` times (default once), vectorized."""
        self._require_mutable("add")
        if counts is None:
            counts = np.ones(len(passwords), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (len(passwords),):
            raise SketchError("passwords and counts differ in length")
        if counts.size and counts.min() < 0:
            raise SketchError("counts must be nonnegative")
        added = int(counts.sum())
        if self.total + added >= 2**31:
            raise SketchError("total would overflow 32-bit counters")
        keys = fingerprints(passwords)
        deltas = self.hashes.signs_many(keys) * counts
        cols = self.hashes.columns_many(keys)
        for row in range(self.d):
            acc = np.bincount(cols[row], weights=deltas, minlength=self.w)
            self.table[row] += np.rint(acc).astype(np.int32)
        self.total += added
        return self

    def add_corpus(self, corpus) -> CountSketch:
        return self.add_many(corpus.passwords, corpus.counts)

    def estimate(self, pw: str) -> float:
        key = fingerprint(pw)
        sign = self.hashes.sign(key)
        values = sorted(float(self.table[row, col]) * sign
                        for row, col in enumerate(self.hashes.columns(key)))
        mid = self.d // 2
        if self.d % 2:
            return values[mid]
        return (values[mid - 1] + values[mid]) / 2

    def estimate_many(self, passwords: Sequence[str]) -> np.ndarray:
        keys = fingerprints(passwords)
        cols = self.hashes.columns_many(keys)
        signs = self.hashes.signs_many(keys).astype(np.float64)
        rows = np.arange(self.d)[:, None]
        values = self.table[rows, cols].astype(np.float64) * signs
        return np.median(values, axis=0)

    def total_freq(self) -> float:
        return float(self.total)

    def privatize(self, epsilon: float, rng: np.random.Generator) -> CountSketch:
        """Add Laplace((d+1)/epsilon) noise to every cell and the total, then freeze."""
        if self.privatized:
            raise SketchError("sketch is already privatized")
        if not epsilon > 0 or math.isinf(epsilon):
            raise SketchError(f"epsilon must be a positive finite number, got {epsilon}")
        scale = self.noise_scale(epsilon)
        noise = rng.laplace(0.0, scale, size=self.table.shape)
        self.table = (self.table + noise).astype(np.float32)
        self.total = float(self.total + rng.laplace(0.0, scale))
        self.privatized = True
        self.epsilon = float(epsilon)
        return self

    def noise_scale(self, epsilon: float) -> float:
        return (self.d + 1) / epsilon

    def estimated_probability(self, pw: str) -> float:
        total = self.total_freq()
        if total <= 0:
            raise SketchError(f"total frequency {total} is not positive")
        return min(max(self.estimate(pw), 0.0), total) / total

    def estimated_probabilities(self, passwords: Sequence[str]) -> np.ndarray:
        total = self.total_freq()
        if total <= 0:
            raise SketchError(f"total frequency {total} is not positive")
        return np.clip(self.estimate_many(passwords), 0.0, total) / total

    def same_state(self, other: CountSketch) -> bool:
        return (
            (self.d, self.w, self.seed, self.privatized, self.epsilon, self.total)
            == (other.d, other.w, other.seed, other.privatized, other.epsilon, other.total)
            and self.table.dtype == other.table.dtype
            and np.array_equal(self.table, other.table)
        )

    def to_bytes(self) -> bytes:
        code = b"f" if self.privatized else b"i"
        eps = math.nan if self.epsilon is None else self.epsilon
        header = _HEADER.pack(_MAGIC, _VERSION, self.d, self.w, self.seed & _MASK64,
                              int(self.privatized), eps, float(self.total), code)
        return header + self.table.astype(self.table.dtype.newbyteorder("<"), copy=False).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> CountSketch:
        if len(data) < _HEADER.size:
            raise SketchError("truncated sketch header")
        magic, version, d, w, seed, privatized, eps, total, code = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise SketchError("not a serialized sketch (bad magic)")
        if version != _VERSION:
            raise SketchError(f"unsupported sketch format version {version}")
        dtype = {b"i": np.dtype("<i4"), b"f": np.dtype("<f4")}.get(code)
        if dtype is None:
            raise SketchError(f"unknown cell type {code!r}")
        body = data[_HEADER.size:]
        if len(body) != d * w * dtype.itemsize:
            raise SketchError("sketch body length does not match its header")
        sketch = cls(d, w, seed)
        sketch.table = np.frombuffer(body, dtype=dtype).reshape(d, w).astype(dtype.newbyteorder("="))
        sketch.privatized = bool(privatized)
        sketch.epsilon = None if math.isnan(eps) else eps
        sketch.total = total if privatized else int(total)
        return sketch

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> CountSketch:
        return cls.from_bytes(Path(path).read_bytes())


def initialize(d: int, w: int, seed: int = 0) -> CountSketch:
    return CountSketch(d, w, seed)


def build_sketch(corpus, d: int = 5, w: int = 10**6, seed: int = 0,
                 epsilon: float = math.inf, rng: np.random.Generator | None = None) -> CountSketch:
    """Sketch of a whole corpus, privatized when ``epsilon`` is finite."""
    sketch = CountSketch(d, w, seed).add_corpus(corpus)
    if not math.isinf(epsilon):
        if rng is None:
            rng = np.random.default_rng(seed)
        sketch.privatize(epsilon, rng)
    return sketch
