"""Password corpora and the empirical distributions they induce.

A corpus is a multiset of user passwords stored as ``(password, count)``
pairs. Two on-disk layouts are understood:

* ``plaintext-counts``: UTF-8 lines ``pw<TAB>count``, no header.
* ``histogram-only``: one decimal count per line. Such corpora carry no
  strings, so every entry gets a synthetic ``#rank<i>`` name.

The ``#rank`` prefix is reserved: it never appears in a plaintext corpus,
which keeps synthetic names from colliding with real passwords.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable, Iterator, Sequence
from pathlib import Path

import numpy as np

from .errors import CorpusError

SYNTHETIC_PREFIX = "#rank"
PLAINTEXT = "plaintext-counts"
HISTOGRAM = "histogram-only"
FORMATS = (PLAINTEXT, HISTOGRAM)

# Ranks copied verbatim when relabelling a frequency-only corpus.
MAPPED_TOP = 20_000


def synthetic_name(rank: int) -> str:
    return f"{SYNTHETIC_PREFIX}{rank}"


class PasswordCorpus:
    """Immutable multiset of passwords with positive integer counts."""

    __slots__ = ("_passwords", "_counts", "_total")

    def __init__(self, passwords: Sequence[str], counts: Iterable[int]) -> None:
        passwords = tuple(passwords)
        if not isinstance(counts, np.ndarray):
            counts = list(counts)
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim != 1 or len(passwords) != counts.shape[0]:
            raise CorpusError("passwords and counts must have equal length")
        if counts.size and counts.min() < 1:
            bad = int(np.argmin(counts))
            raise CorpusError(f"count for {passwords[bad]!r} must be >= 1, got {counts[bad]}")
        if len(set(passwords)) != len(passwords):
            raise CorpusError("duplicate password in corpus")
        counts.setflags(write=False)
        self._passwords = passwords
        self._counts = counts
        self._total = int(counts.sum())

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, int]]) -> PasswordCorpus:
        pairs = list(pairs)
        return cls([pw for pw, _ in pairs], [c for _, c in pairs])

    @property
    def passwords(self) -> tuple[str, ...]:
        return self._passwords

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    @property
    def total(self) -> int:
        return self._total

    @property
    def entries(self) -> list[tuple[str, int]]:
        return list(self)

    def __len__(self) -> int:
        return len(self._passwords)

    def __iter__(self) -> Iterator[tuple[str, int]]:
        return zip(self._passwords, (int(c) for c in self._counts))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PasswordCorpus):
            return NotImplemented
        return self._passwords == other._passwords and np.array_equal(self._counts, other._counts)

    def __hash__(self) -> int:
        return hash((self._passwords, self._counts.tobytes()))

    def __repr__(self) -> str:
        return f"PasswordCorpus(entries={len(self)}, total={self.total})"

    def rank_order(self) -> np.ndarray:
        """Indices sorting entries by count descending, then password ascending."""
        if not self._passwords:
            return np.zeros(0, dtype=np.int64)
        names = np.array(self._passwords, dtype=object)
        # Python string order (code points) for the tie-break.
        by_name = np.array(sorted(range(len(names)), key=names.__getitem__), dtype=np.int64)
        ordered = by_name[np.argsort(-self._counts[by_name], kind="stable")]
        return ordered

    def ranked(self) -> PasswordCorpus:
        order = self.rank_order()
        return PasswordCorpus([self._passwords[i] for i in order], self._counts[order])

    def without_top(self, banned: int) -> PasswordCorpus:
        """Drop the ``banned`` most common passwords (the banlist corpus)."""
        if banned < 0:
            raise CorpusError(f"banlist size must be >= 0, got {banned}")
        if banned >= len(self):
            raise CorpusError(f"banlist size {banned} leaves no passwords out of {len(self)}")
        ranked = self.ranked()
        return PasswordCorpus(ranked.passwords[banned:], ranked.counts[banned:])


class Distribution:
    """Probability distribution over passwords, ranked by descending probability."""

    __slots__ = ("_passwords", "_probs", "_cumulative", "_index")

    def __init__(self, passwords: Sequence[str], probs: Iterable[float]) -> None:
        passwords = tuple(passwords)
        probs = np.asarray(probs, dtype=np.float64).copy()
        if not passwords or len(passwords) != probs.shape[0]:
            raise CorpusError("distribution needs matching, nonempty passwords and probabilities")
        if probs.min() < 0:
            raise CorpusError("negative probability")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise CorpusError(f"probabilities sum to {probs.sum()!r}, not 1")
        if np.any(np.diff(probs) > 0):
            raise CorpusError("distribution must be sorted by descending probability")
        probs.setflags(write=False)
        cumulative = np.cumsum(probs)
        cumulative[-1] = 1.0
        cumulative.setflags(write=False)
        self._passwords = passwords
        self._probs = probs
        self._cumulative = cumulative
        self._index: dict[str, int] | None = None

    @property
    def passwords(self) -> tuple[str, ...]:
        return self._passwords

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def cumulative(self) -> np.ndarray:
        return self._cumulative

    @property
    def ranked(self) -> list[tuple[str, float]]:
        return list(zip(self._passwords, self._probs.tolist()))

    def __len__(self) -> int:
        return len(self._passwords)

    def __repr__(self) -> str:
        return f"Distribution(entries={len(self)}, top={self._probs[0]:.6g})"

    def rank(self, pw: str) -> int | None:
        """1-based rank of ``pw`` or None when absent."""
        if self._index is None:
            self._index = {p: i for i, p in enumerate(self._passwords)}
        i = self._index.get(pw)
        return None if i is None else i + 1

    def p(self, pw: str) -> float:
        r = self.rank(pw)
        return 0.0 if r is None else float(self._probs[r - 1])

    def __getstate__(self):
        return (self._passwords, self._probs, self._cumulative)

    def __setstate__(self, state) -> None:
        self._passwords, self._probs, self._cumulative = state
        self._index = None


def load_corpus(path: str | Path, format: str = PLAINTEXT) -> PasswordCorpus:
    """Parse a corpus file in one of the supported layouts."""
    if format not in FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    passwords: list[str] = []
    counts: list[int] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw[:-1] if raw.endswith("\n") else raw
            if format == HISTOGRAM:
                if not line.strip():
                    continue
                count = _parse_count(line.strip(), lineno)
                passwords.append(synthetic_name(len(passwords) + 1))
                counts.append(count)
                continue
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"expected 'pw<TAB>count', got {line!r}", lineno)
            pw, count_text = parts
            if pw.startswith(SYNTHETIC_PREFIX):
                raise CorpusError(f"prefix {SYNTHETIC_PREFIX!r} is reserved", lineno)
            if pw in seen:
                raise CorpusError(f"duplicate password {pw!r}", lineno)
            seen.add(pw)
            passwords.append(pw)
            counts.append(_parse_count(count_text, lineno))
    return PasswordCorpus(passwords, counts)


def _parse_count(text: str, lineno: int) -> int:
    try:
        value = int(text, 10)
    except ValueError:
        raise CorpusError(f"count {text!r} is not a decimal integer", lineno) from None
    if value < 1:
        raise CorpusError(f"count must be >= 1, got {value}", lineno)
    return value


def save_corpus(corpus: PasswordCorpus, path: str | Path, format: str = PLAINTEXT) -> None:
    if format not in FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pw, count in corpus:
            if format == HISTOGRAM:
                fh.write(f"{count}\n")
                continue
            if "\t" in pw or "\n" in pw or "\r" in pw:
                raise CorpusError(f"password {pw!r} cannot be stored in {PLAINTEXT} format")
            fh.write(f"{pw}\t{count}\n")


def empirical_distribution(corpus: PasswordCorpus) -> Distribution:
    """p(pw) = count / total, ranked with lexicographic tie-breaks."""
    if len(corpus) == 0:
        raise CorpusError("empirical distribution of an empty corpus")
    order = corpus.rank_order()
    counts = corpus.counts[order]
    return Distribution([corpus.passwords[i] for i in order], counts / corpus.total)


def apply_banlist(dist: Distribution, banned: int) -> Distribution:
    """Remove the top ``banned`` passwords and renormalize the rest.

    This is the normalized-probabilities model: users whose choice is
    banned resample until they land outside the banlist.
    """
    if banned < 0:
        raise CorpusError(f"banlist size must be >= 0, got {banned}")
    if banned >= len(dist):
        raise CorpusError(f"banlist size {banned} >= number of entries {len(dist)}")
    if banned == 0:
        return dist
    rest = dist.probs[banned:]
    return Distribution(dist.passwords[banned:], rest / rest.sum())


def subsample(corpus: PasswordCorpus, rate: float, rng: np.random.Generator) -> PasswordCorpus:
    """Keep each account independently with probability ``rate``."""
    if not 0.0 < rate <= 1.0:
        raise CorpusError(f"subsample rate must lie in (0, 1], got {rate}")
    if rate == 1.0:
        return corpus
    kept = rng.binomial(corpus.counts, rate)
    mask = kept > 0
    if not mask.any():
        raise CorpusError("subsample retained no accounts")
    passwords = [pw for pw, keep in zip(corpus.passwords, mask) if keep]
    return PasswordCorpus(passwords, kept[mask])


def zipf_names(n: int) -> list[str]:
    """Distinct, random-looking lowercase strings for synthetic corpora.

    Hash-derived so that typos of one name almost never land on another.
    """
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
    names: list[str] = []
    seen: set[str] = set()
    for i in range(1, n + 1):
        digest = int.from_bytes(hashlib.blake2b(f"zipf:{i}".encode(), digest_size=8).digest(), "little")
        chars = []
        for _ in range(9):
            digest, r = divmod(digest, len(alphabet))
            chars.append(alphabet[r])
        name = "".join(chars)
        if name in seen:
            name = f"{name}{i}"
        seen.add(name)
        names.append(name)
    return names


def synthesize_zipf(n: int, s: float, accounts: int, names: Sequence[str] | None = None) -> PasswordCorpus:
    """Zipf-shaped corpus: count_i ~ accounts * i^-s / H, rounding residue on rank 1."""
    if n < 1:
        raise CorpusError(f"need n >= 1, got {n}")
    if s <= 0:
        raise CorpusError(f"need exponent s > 0, got {s}")
    if accounts < n:
        raise CorpusError(f"need accounts >= n, got {accounts} < {n}")
    weights = np.arange(1, n + 1, dtype=np.float64) ** -s
    harmonic = math.fsum(weights.tolist())
    counts = np.rint(accounts * weights / harmonic).astype(np.int64)
    # Every listed password must occur at least once.
    counts = np.maximum(counts, 1)
    counts[0] += accounts - int(counts.sum())
    if counts[0] < 1 or (n > 1 and counts[0] < counts[1]):
        raise CorpusError("rounding residue leaves rank 1 below rank 2; increase accounts")
    if names is None:
        names = zipf_names(n)
    elif len(names) != n:
        raise CorpusError(f"expected {n} names, got {len(names)}")
    return PasswordCorpus(names, counts)


def map_strings(target: PasswordCorpus, donor: PasswordCorpus, top: int = MAPPED_TOP) -> PasswordCorpus:
    """Give a frequency-only corpus plaintext strings borrowed from a donor.

    Target rank r <= ``top`` gets the donor's rank-r string. Beyond that,
    donor strings are spread by a uniform stride over the remaining target
    ranks; target ranks left without a donor string keep a synthetic name.
    Counts are never touched.
    """
    if len(donor) < top:
        raise CorpusError(f"donor corpus has {len(donor)} entries, need at least {top}")
    tgt = target.ranked()
    donor_ranked = donor.ranked().passwords
    n_target = len(tgt)
    names: list[str] = list(donor_ranked[:min(top, n_target)])
    rest_target = n_target - len(names)
    rest_donor = len(donor_ranked) - top
    if rest_target > 0:
        tail: list[str | None] = [None] * rest_target
        if rest_donor >= rest_target:
            for j in range(rest_target):
                tail[j] = donor_ranked[top + (j * rest_donor) // rest_target]
        else:
            for j in range(rest_donor):
                tail[(j * rest_target) // rest_donor] = donor_ranked[top + j]
        for j, name in enumerate(tail):
            names.append(name if name is not None else synthetic_name(top + j + 1))
    return PasswordCorpus(names, tgt.counts)


def sample_password(dist: Distribution, rng: np.random.Generator) -> str:
    """Draw one password with probability exactly ``dist.p(pw)``."""
    idx = int(np.searchsorted(dist.cumulative, rng.random(), side="right"))
    return dist.passwords[min(idx, len(dist) - 1)]


def sample_passwords(dist: Distribution, rng: np.random.Generator, size: int) -> list[str]:
    idx = np.searchsorted(dist.cumulative, rng.random(size), side="right")
    np.minimum(idx, len(dist) - 1, out=idx)
    return [dist.passwords[i] for i in idx]
