"""Simulated users: password choice, login schedules and login mistakes.

Each user draws six passwords i.i.d. from the population distribution:
the first is registered, the other five are alternates they might confuse
it with. Visits follow a Poisson process with a per-user mean gap ``T_u``.
At every visit the user keeps trying until they get in or are locked out.

A user's behavior never depends on the throttling policy, only on when the
account locks. :func:`simulate_user` therefore draws the attempt stream
visit by visit and stops at the lock, so two policies evaluated on the same
user see identical attempts up to the earlier lock.
"""

from __future__ import annotations

import bisect
import csv
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import Distribution
from .errors import InvariantViolation
from .throttle import AccountState, LoginOutcome

HORIZON_HOURS = 180 * 24
ARRIVAL_MEANS = (12, 24, 72, 168, 336, 720)
N_ALTERNATES = 5

# Printable ASCII used for inserted and replacement characters.
ALPHABET = "".join(chr(c) for c in range(0x20, 0x7F))
_RETRIES = 10


class TypoType(Enum):
    CAPLOCK = "CapLock"
    SHIFT_FIRST = "ShiftFirst"
    INSERT1 = "Insert1"
    DELETE1 = "Delete1"
    REPLACE1 = "Replace1"
    TRANSPOSE = "Transpose"
    DELETE2 = "Delete2"
    INSERT2 = "Insert2"
    REPLACE2 = "Replace2"
    OTHERS = "Others"


# Rounded percentages; they sum to 101 and are renormalized.
TYPO_TABLE: dict[TypoType, int] = {
    TypoType.CAPLOCK: 14,
    TypoType.SHIFT_FIRST: 4,
    TypoType.INSERT1: 12,
    TypoType.DELETE1: 12,
    TypoType.REPLACE1: 31,
    TypoType.TRANSPOSE: 4,
    TypoType.DELETE2: 3,
    TypoType.INSERT2: 3,
    TypoType.REPLACE2: 10,
    TypoType.OTHERS: 8,
}


@dataclass(frozen=True)
class TypoModel:
    mistake_rate: float = 0.075
    typo_given_mistake: float = 0.68
    recall_given_mistake: float = 0.32
    weights: tuple[float, ...] = tuple(TYPO_TABLE.values())

    def __post_init__(self) -> None:
        if not 0.0 <= self.mistake_rate < 1.0:
            raise ValueError(f"mistake rate must lie in [0, 1), got {self.mistake_rate}")
        if abs(self.typo_given_mistake + self.recall_given_mistake - 1.0) > 1e-12:
            raise ValueError("typo and recall probabilities must sum to 1")
        if len(self.weights) != len(TypoType):
            raise ValueError("need one weight per typo category")

    @property
    def categories(self) -> tuple[TypoType, ...]:
        return tuple(TypoType)

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()

    @property
    def recall_typo_rate(self) -> float:
        """Chance that a recalled alternate is also mistyped."""
        return self.mistake_rate * self.typo_given_mistake

    def sample_type(self, rng: random.Random) -> TypoType:
        return _TYPES[bisect.bisect_right(self._cumulative, rng.random())]

    @property
    def _cumulative(self) -> list[float]:
        cum = getattr(self, "_cum_cache", None)
        if cum is None:
            cum = np.cumsum(self.probabilities).tolist()
            cum[-1] = 1.0 + 1e-12
            object.__setattr__(self, "_cum_cache", cum)
        return cum


_TYPES = tuple(TypoType)


@dataclass(frozen=True)
class UserProfile:
    true_pw: str
    alternates: tuple[str, ...]
    T_u: int


@dataclass(frozen=True)
class VisitSchedule:
    times: np.ndarray

    def __len__(self) -> int:
        return int(self.times.shape[0])


class AttemptKind(Enum):
    CORRECT = "correct"
    TYPO = "typo"
    RECALL = "recall"
    RECALL_TYPO = "recall+typo"


class Attempt(NamedTuple):
    submitted: str
    kind: AttemptKind
    typo: TypoType | None = None


@dataclass
class VisitRecord:
    time: int
    attempts: list[tuple[str, LoginOutcome, AccountState]] = field(default_factory=list)

    @property
    def outcome(self) -> LoginOutcome | None:
        return self.attempts[-1][1] if self.attempts else None


@dataclass
class LoginTrace:
    """A user's visits and the wrong passwords they typed before getting in.

    ``mistakes`` maps a visit index to the wrong submissions of that visit
    (visits absent from the map were a single correct attempt). When the
    account locks, ``locked_visit`` is the index of that visit; the locking
    visit's entry holds the wrong attempts that were evaluated and no
    later visit is recorded.
    """

    user_id: int
    profile: UserProfile
    times: np.ndarray
    mistakes: dict[int, tuple[str, ...]]
    locked_visit: int | None = None

    @property
    def locked(self) -> bool:
        return self.locked_visit is not None

    @property
    def lock_time(self) -> int | None:
        return None if self.locked_visit is None else int(self.times[self.locked_visit])

    @property
    def status(self) -> str:
        return "locked" if self.locked else "active"

    def visit_mistakes(self, j: int) -> tuple[str, ...]:
        return self.mistakes.get(j, ())


def as_random(rng) -> random.Random:
    """Accept a ``random.Random`` or numpy Generator for scalar draws."""
    if isinstance(rng, random.Random):
        return rng
    if isinstance(rng, np.random.Generator):
        return random.Random(int(rng.integers(0, 2**63)))
    raise TypeError(f"unsupported random generator {type(rng).__name__}")


def user_streams(seed: int, user_id: int) -> tuple[np.random.Generator, random.Random]:
    """Independent per-user streams: numpy for bulk draws, Random for attempts."""
    ss = np.random.SeedSequence(seed, spawn_key=(user_id,))
    bulk, attempts = ss.spawn(2)
    return np.random.default_rng(bulk), random.Random(int(attempts.generate_state(2, np.uint64)[0]))


def generate_user(dist: Distribution, rng: np.random.Generator) -> UserProfile:
    idx = np.searchsorted(dist.cumulative, rng.random(1 + N_ALTERNATES), side="right")
    np.minimum(idx, len(dist) - 1, out=idx)
    pws = [dist.passwords[i] for i in idx]
    T_u = ARRIVAL_MEANS[int(rng.integers(len(ARRIVAL_MEANS)))]
    return UserProfile(pws[0], tuple(pws[1:]), T_u)


def generate_schedule(T_u: float, horizon: int = HORIZON_HOURS, rng: np.random.Generator | None = None) -> VisitSchedule:
    """Poisson visits: exponential gaps, rounded up to whole hours, same-hour visits merged."""
    if T_u <= 0:
        raise ValueError(f"mean gap must be positive, got {T_u}")
    if rng is None:
        rng = np.random.default_rng()
    if horizon <= 0:
        return VisitSchedule(np.zeros(0, dtype=np.int64))
    chunks = []
    elapsed = 0.0
    batch = int(horizon / T_u * 1.2) + 16
    while elapsed <= horizon:
        arrivals = elapsed + np.cumsum(rng.exponential(T_u, size=batch))
        chunks.append(arrivals)
        elapsed = float(arrivals[-1])
    arrivals = np.concatenate(chunks)
    hours = np.ceil(arrivals[arrivals <= horizon]).astype(np.int64)
    # A zero draw would land on hour 0; the first visit is after registration.
    hours = np.maximum(hours, 1)
    return VisitSchedule(np.unique(hours))


def _case_flip(ch: str) -> str:
    flipped = ch.swapcase()
    return flipped if len(flipped) == 1 else ch


def _random_char(rng: random.Random, avoid: str | None = None) -> str:
    while True:
        ch = ALPHABET[int(rng.random() * len(ALPHABET))]
        if ch != avoid:
            return ch


def _insert(pw: str, k: int, rng: random.Random) -> str:
    chars = list(pw)
    for _ in range(k):
        chars.insert(rng.randrange(len(chars) + 1), _random_char(rng))
    return "".join(chars)


def _delete(pw: str, k: int, rng: random.Random) -> str:
    chars = list(pw)
    for _ in range(k):
        del chars[rng.randrange(len(chars))]
    return "".join(chars)


def _replace(pw: str, k: int, rng: random.Random) -> str:
    chars = list(pw)
    for pos in rng.sample(range(len(chars)), k):
        chars[pos] = _random_char(rng, avoid=chars[pos])
    return "".join(chars)


def _applicable(pw: str, typo: TypoType) -> bool:
    n = len(pw)
    if typo is TypoType.CAPLOCK:
        return "".join(_case_flip(c) for c in pw) != pw
    if typo is TypoType.SHIFT_FIRST:
        return n >= 1 and _case_flip(pw[0]) != pw[0]
    if typo is TypoType.DELETE1:
        return n >= 2
    if typo is TypoType.DELETE2:
        return n >= 3
    if typo is TypoType.REPLACE1:
        return n >= 1
    if typo is TypoType.REPLACE2:
        return n >= 2
    if typo is TypoType.TRANSPOSE:
        return any(pw[i] != pw[i + 1] for i in range(n - 1))
    return True


def _mutate(pw: str, typo: TypoType, rng: random.Random) -> str:
    if typo is TypoType.CAPLOCK:
        return "".join(_case_flip(c) for c in pw)
    if typo is TypoType.SHIFT_FIRST:
        return _case_flip(pw[0]) + pw[1:]
    if typo is TypoType.INSERT1:
        return _insert(pw, 1, rng)
    if typo is TypoType.INSERT2:
        return _insert(pw, 2, rng)
    if typo is TypoType.DELETE1:
        return _delete(pw, 1, rng)
    if typo is TypoType.DELETE2:
        return _delete(pw, 2, rng)
    if typo is TypoType.REPLACE1:
        return _replace(pw, 1, rng)
    if typo is TypoType.REPLACE2:
        return _replace(pw, 2, rng)
    if typo is TypoType.TRANSPOSE:
        pairs = [i for i in range(len(pw) - 1) if pw[i] != pw[i + 1]]
        i = pairs[rng.randrange(len(pairs))]
        return pw[:i] + pw[i + 1] + pw[i] + pw[i + 2:]
    # Three independent single-character edits.
    out = pw
    for _ in range(3):
        op = rng.randrange(3)
        if op == 1 and len(out) > 1:
            out = _delete(out, 1, rng)
        elif op == 2 and out:
            out = _replace(out, 1, rng)
        else:
            out = _insert(out, 1, rng)
    return out


def apply_typo_ex(pw: str, typo: TypoType, rng) -> tuple[str, TypoType]:
    """Mistype ``pw``; also return the category actually applied.

    Categories that cannot apply to ``pw`` (e.g. a transposition of a
    single character) fall back to a single insertion.
    """
    rng = as_random(rng)
    if not _applicable(pw, typo):
        typo = TypoType.INSERT1
    for _ in range(_RETRIES):
        out = _mutate(pw, typo, rng)
        if out != pw:
            return out, typo
    return pw + _random_char(rng), typo


def apply_typo(pw: str, typo: TypoType, rng) -> str:
    return apply_typo_ex(pw, typo, rng)[0]


def draw_attempt(profile: UserProfile, model: TypoModel, rng) -> Attempt:
    """One login attempt following the mistake flowchart."""
    if rng.random() >= model.mistake_rate:
        return Attempt(profile.true_pw, AttemptKind.CORRECT)
    if rng.random() < model.typo_given_mistake:
        out, typo = apply_typo_ex(profile.true_pw, model.sample_type(rng), rng)
        return Attempt(out, AttemptKind.TYPO, typo)
    alt = profile.alternates[rng.randrange(len(profile.alternates))]
    if rng.random() < model.recall_typo_rate:
        out, typo = apply_typo_ex(alt, model.sample_type(rng), rng)
        return Attempt(out, AttemptKind.RECALL_TYPO, typo)
    return Attempt(alt, AttemptKind.RECALL)


def sample_attempt(profile: UserProfile, model: TypoModel, rng) -> str:
    return draw_attempt(profile, model, as_random(rng)).submitted


def simulate_visit(profile: UserProfile, state: AccountState, policy, oracle, model: TypoModel,
                   rng, time: int = 0) -> tuple[AccountState, VisitRecord]:
    """Attempt until granted or locked. A locked account's visit is a no-op."""
    record = VisitRecord(time)
    if policy.is_locked(state):
        return state, record
    rng = as_random(rng)
    while True:
        submitted = draw_attempt(profile, model, rng).submitted
        state, outcome = policy.login(state, submitted, profile.true_pw, oracle)
        record.attempts.append((submitted, outcome, state))
        if outcome is not LoginOutcome.DENIED:
            return state, record


def simulate_user(user_id: int, dist: Distribution, policy, oracle, model: TypoModel | None = None,
                  seed: int = 0, horizon: int = HORIZON_HOURS) -> LoginTrace:
    """Full trace of one user against ``policy`` with per-user seeded streams."""
    model = model or TypoModel()
    bulk, attempts_rng = user_streams(seed, user_id)
    profile = generate_user(dist, bulk)
    times = generate_schedule(profile.T_u, horizon, bulk).times
    mistakes: dict[int, tuple[str, ...]] = {}
    locked_visit = None
    true_pw = profile.true_pw
    rate = model.mistake_rate
    K, Psi = policy.K, policy.Psi
    psi = 0.0
    for j in range(times.shape[0]):
        # Fast path for the common single correct attempt.
        if attempts_rng.random() >= rate:
            continue
        wrong: list[str] = []
        first = True
        while True:
            if first:
                attempt = _draw_mistake(profile, model, attempts_rng)
                first = False
            else:
                attempt = draw_attempt(profile, model, attempts_rng).submitted
            if attempt == true_pw:
                break
            wrong.append(attempt)
            if not math.isinf(Psi):
                psi += oracle.estimate_popularity(attempt)
            # A denied user always retries, so crossing a threshold means
            # the next attempt of this visit is refused.
            if len(wrong) >= K or psi >= Psi:
                locked_visit = j
                break
        if wrong:
            mistakes[j] = tuple(wrong)
        if locked_visit is not None:
            break
    return LoginTrace(user_id, profile, times, mistakes, locked_visit)


def _draw_mistake(profile: UserProfile, model: TypoModel, rng: random.Random) -> str:
    """The mistake branch of :func:`draw_attempt` (the mistake coin already flipped)."""
    if rng.random() < model.typo_given_mistake:
        return apply_typo_ex(profile.true_pw, model.sample_type(rng), rng)[0]
    alt = profile.alternates[rng.randrange(len(profile.alternates))]
    if rng.random() < model.recall_typo_rate:
        return apply_typo_ex(alt, model.sample_type(rng), rng)[0]
    return alt


def replay(trace: LoginTrace, policy, oracle) -> list[VisitRecord]:
    """Re-run a trace through the state machine, attempt by attempt."""
    state = AccountState()
    records = []
    for j, t in enumerate(trace.times.tolist()):
        record = VisitRecord(int(t))
        for submitted in trace.visit_mistakes(j):
            state, outcome = policy.login(state, submitted, trace.profile.true_pw, oracle)
            record.attempts.append((submitted, outcome, state))
            if outcome is LoginOutcome.LOCKED:
                break
        if trace.locked_visit == j:
            # The refused attempt's string is not stored; only its outcome matters.
            state, outcome = policy.login(state, "", trace.profile.true_pw, oracle)
            if outcome is not LoginOutcome.LOCKED:
                raise InvariantViolation(f"user {trace.user_id}: expected a lock at visit {j}")
            record.attempts.append(("", outcome, state))
            records.append(record)
            break
        state, outcome = policy.login(state, trace.profile.true_pw, trace.profile.true_pw, oracle)
        record.attempts.append((trace.profile.true_pw, outcome, state))
        records.append(record)
    return records


TRACE_HEADER = ("user_id", "visit_time", "attempt_index", "outcome", "psi_u", "k_u")


def export_traces(traces: Sequence[LoginTrace], policy, oracle, path: str | Path) -> None:
    """One CSV row per attempt."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for trace in traces:
            for record in replay(trace, policy, oracle):
                for i, (_, outcome, state) in enumerate(record.attempts):
                    writer.writerow((trace.user_id, record.time, i, outcome.value,
                                     f"{state.psi_u:.9g}", state.k_u))
