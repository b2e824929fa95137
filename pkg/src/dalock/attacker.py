"""Untargeted online attacker with full knowledge of the password distribution.

For one victim the attacker knows the login trace ahead of time. Attacking
at the start of hour ``t`` (before any user visit in that hour) it may spend

* ``M(t)`` wrong guesses without reaching ``K`` consecutive failures: in
  every window between two user successes it fits ``K - 1 - m`` guesses,
  where ``m`` is the number of user mistakes closing that window, plus
  ``K - 1`` in the window still open at ``t``;
* estimated popularity below ``Psi'(t) = Psi - psi_{u,t}``, the part of the
  hit-count budget the user has not burned before ``t``.

The final guess at ``t`` is the holdout, which is never charged. Choosing
the guesses is the password knapsack problem: pick ``S`` with
``sum(estP) < Psi'`` and ``|S| <= M`` maximizing ``sum(trueP)``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import Distribution
from .errors import InvariantViolation, KnapsackError
from .throttle import AccountState, LoginOutcome
from .usersim import HORIZON_HOURS, LoginTrace

BRUTE_FORCE_MAX = 22
HEURISTICS = ("fmppf", "dab", "brute")


class Candidate(NamedTuple):
    pw: str
    trueP: float
    estP: float


@dataclass
class PKInstance:
    candidates: list[Candidate]
    capacity: float
    M: int

    def __post_init__(self) -> None:
        names = [c.pw for c in self.candidates]
        if len(set(names)) != len(names):
            raise KnapsackError("candidate passwords must be distinct")
        for c in self.candidates:
            if not (0 <= c.trueP <= 1 and 0 <= c.estP <= 1):
                raise KnapsackError(f"probabilities of {c.pw!r} must lie in [0, 1]")
        if self.capacity < 0:
            raise KnapsackError("capacity must be nonnegative")
        if self.M < 0:
            raise KnapsackError("cardinality bound must be nonnegative")

    def __len__(self) -> int:
        return len(self.candidates)

    def value(self, S: Sequence[str], holdout: str | None = None):
        true = {c.pw: c.trueP for c in self.candidates}
        total = sum((true[pw] for pw in S), start=0)
        return total + (true[holdout] if holdout is not None else 0)

    def best_holdout(self, S: Sequence[str]) -> str | None:
        chosen = set(S)
        rest = [c for c in self.candidates if c.pw not in chosen]
        if not rest:
            return None
        return min(rest, key=lambda c: (-c.trueP, c.pw)).pw


def _check_feasible(S: Sequence[Candidate], capacity: float, M: int, who: str) -> None:
    total = 0.0
    for c in S:
        total = total + c.estP
    if len(S) > M or (S and not total < capacity):
        raise InvariantViolation(
            f"{who} returned an infeasible set: |S|={len(S)} (M={M}), sum(estP)={total} (capacity {capacity})")


def fmppf(candidates: Sequence[Candidate], capacity: float, M: int) -> list[str]:
    """Greedy by descending true probability with a strict capacity test."""
    ordered = sorted(candidates, key=lambda c: (-c.trueP, c.pw))
    chosen: list[Candidate] = []
    total = 0.0
    for c in ordered:
        if len(chosen) >= M:
            break
        if total + c.estP < capacity:
            chosen.append(c)
            total = total + c.estP
    _check_feasible(chosen, capacity, M, "fmppf")
    return [c.pw for c in chosen]


def dab(candidates: Sequence[Candidate], capacity: float, M: int) -> list[str]:
    """Ratio-ordered greedy with singleton replacement, repeated until stable.

    Candidates are visited by ``estP / trueP`` ascending (underestimated
    passwords first). A password too expensive to ever fit alone is skipped.
    """
    def ratio(c: Candidate) -> float:
        return c.estP / c.trueP if c.trueP > 0 else math.inf

    ordered = sorted(candidates, key=lambda c: (ratio(c), -c.trueP, c.pw))
    chosen: list[Candidate] = []
    members: set[str] = set()
    est_sum = 0.0
    true_sum = 0.0
    changed = True
    while changed:
        changed = False
        for c in ordered:
            if c.pw in members or not c.estP < capacity:
                continue
            if est_sum + c.estP < capacity and len(chosen) <= M:
                chosen.append(c)
                members.add(c.pw)
                est_sum = est_sum + c.estP
                true_sum = true_sum + c.trueP
                changed = True
            elif c.trueP > true_sum:
                chosen, members = [c], {c.pw}
                est_sum, true_sum = c.estP, c.trueP
                changed = True
    chosen.sort(key=lambda c: (-c.trueP, c.pw))
    chosen = chosen[:M]
    _check_feasible(chosen, capacity, M, "dab")
    return [c.pw for c in chosen]


@dataclass
class BruteForceResult:
    S: tuple[str, ...]
    holdout: str | None
    value: float | Fraction


def brute_force_pk(instance: PKInstance) -> BruteForceResult:
    """Exact optimum of the knapsack integer program by enumeration.

    The capacity test here is ``<=``. When every number is a ``Fraction``
    the search runs in exact integer arithmetic. Ties go to the
    lexicographically smallest subset of candidate indices.
    """
    cands = instance.candidates
    n = len(cands)
    if n > BRUTE_FORCE_MAX:
        raise KnapsackError(f"brute force supports at most {BRUTE_FORCE_MAX} candidates, got {n}")
    numbers = [c.trueP for c in cands] + [c.estP for c in cands] + [instance.capacity]
    exact = all(isinstance(x, (Fraction, int)) for x in numbers)
    if exact:
        denom = 1
        for x in numbers:
            denom = math.lcm(denom, Fraction(x).denominator)
        scale = lambda x: int(Fraction(x) * denom)  # noqa: E731
        true = np.array([scale(c.trueP) for c in cands], dtype=object)
        est = np.array([scale(c.estP) for c in cands], dtype=object)
        cap = scale(instance.capacity)
        if denom * (n + 2) < 2**62:
            true, est = true.astype(np.int64), est.astype(np.int64)
    else:
        true = np.array([float(c.trueP) for c in cands])
        est = np.array([float(c.estP) for c in cands])
        cap = float(instance.capacity)

    t_sum = np.zeros(1, dtype=true.dtype)
    e_sum = np.zeros(1, dtype=est.dtype)
    size = np.zeros(1, dtype=np.int64)
    for i in range(n):
        t_sum = np.concatenate((t_sum, t_sum + true[i]))
        e_sum = np.concatenate((e_sum, e_sum + est[i]))
        size = np.concatenate((size, size + 1))
    masks = np.arange(1 << n, dtype=np.int64)

    holdout = np.full(1 << n, -1, dtype=np.int64)
    for i in sorted(range(n), key=lambda i: (-cands[i].trueP, cands[i].pw)):
        free = (holdout == -1) & (((masks >> i) & 1) == 0)
        holdout[free] = i
    bonus = np.zeros(1 << n, dtype=true.dtype)
    has = holdout >= 0
    bonus[has] = true[holdout[has]]
    value = t_sum + bonus
    feasible = (e_sum <= cap) & (size <= instance.M)
    best = value[feasible].max()
    winners = np.flatnonzero(feasible & (value == best))
    subsets = [tuple(i for i in range(n) if (int(m) >> i) & 1) for m in winners]
    k = min(range(len(subsets)), key=lambda j: subsets[j])
    mask = int(winners[k])
    h = int(holdout[mask])
    best_value = Fraction(int(best), denom) if exact else float(best)
    return BruteForceResult(tuple(cands[i].pw for i in subsets[k]),
                            cands[h].pw if h >= 0 else None, best_value)


def reduction_from_subset_sum(xs: Sequence[int], T: int) -> PKInstance:
    """Knapsack instance that reaches ``1/2 + psi`` iff some subset of ``xs`` sums to ``T``."""
    if not xs or any(int(x) != x or x <= 0 for x in xs):
        raise KnapsackError("xs must be a nonempty list of positive integers")
    gamma = sum(xs)
    if not 0 < T <= gamma:
        raise KnapsackError(f"need 0 < T <= sum(xs) = {gamma}, got {T}")
    cands = [Candidate(f"x{i}", Fraction(x, 2 * gamma), Fraction(x, 2 * gamma)) for i, x in enumerate(xs)]
    cands.append(Candidate("p_last", Fraction(1, 2), Fraction(1, 2)))
    return PKInstance(cands, Fraction(T, 2 * gamma), len(xs) + 1)


def subset_sum_exists(xs: Sequence[int], T: int) -> bool:
    reachable = 1
    for x in xs:
        reachable |= reachable << x
    return bool((reachable >> T) & 1)


class KnapsackSolver:
    """Knapsack heuristics over one fixed dictionary, reused across victims.

    The dictionary is ranked by true probability; ``est`` holds the deployed
    oracle's estimates. With the FMPPF rule the cardinality bound only cuts
    the greedy sequence short, so the sequence for a capacity is computed
    once (lazily extended) and any ``M`` is answered by a prefix.
    """

    _BLOCK = 256

    def __init__(self, passwords: Sequence[str], true_p: np.ndarray, est_p: np.ndarray,
                 heuristic: str = "fmppf", cache_size: int = 2048) -> None:
        if heuristic not in HEURISTICS:
            raise KnapsackError(f"unknown heuristic {heuristic!r}")
        self.passwords = tuple(passwords)
        self.true = np.asarray(true_p, dtype=np.float64)
        self.est = np.asarray(est_p, dtype=np.float64)
        if np.any(np.diff(self.true) > 0):
            raise KnapsackError("dictionary must be ranked by descending true probability")
        if self.est.size and self.est.min() < 0:
            raise KnapsackError("estimates must be nonnegative")
        self.heuristic = heuristic
        self.n = self.true.shape[0]
        self.cum_true = np.concatenate(([0.0], np.cumsum(self.true)))
        self._zeros = np.flatnonzero(self.est == 0)
        pos = np.where(self.est > 0, self.est, np.inf)
        self._pos = pos
        self._bmin = (np.minimum.reduceat(pos, np.arange(0, self.n, self._BLOCK))
                      if self.n else np.zeros(0))
        self._cache: OrderedDict[float, _GreedyState] = OrderedDict()
        self._cache_size = cache_size
        self._index: dict[str, int] | None = None

    def index_of(self, pw: str) -> int | None:
        if self._index is None:
            self._index = {p: i for i, p in enumerate(self.passwords)}
        return self._index.get(pw)

    # -- FMPPF fast path ------------------------------------------------------

    def _next_positive_fit(self, start: int, s: float, cap: float) -> int:
        """First ``i >= start`` with ``est[i] > 0`` and ``s + est[i] < cap``, else ``n``."""
        if start >= self.n:
            return self.n
        B = self._BLOCK
        b = start // B
        end = min((b + 1) * B, self.n)
        hits = np.flatnonzero(s + self._pos[start:end] < cap)
        if hits.size:
            return start + int(hits[0])
        blocks = np.flatnonzero(s + self._bmin[b + 1:] < cap)
        if not blocks.size:
            return self.n
        b2 = b + 1 + int(blocks[0])
        lo = b2 * B
        hits = np.flatnonzero(s + self._pos[lo:lo + B] < cap)
        return lo + int(hits[0])

    def _greedy(self, cap: float, limit: int) -> np.ndarray:
        """FMPPF acceptance sequence for ``cap``, at least ``limit`` long when possible."""
        if math.isinf(cap):
            return np.arange(min(limit, self.n))
        state = self._cache.get(cap)
        if state is None:
            state = _GreedyState()
            self._cache[cap] = state
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(cap)
        if state.done or state.count >= limit:
            return state.indices()
        zeros = self._zeros
        pos, s = state.pos, state.s
        while state.count < limit:
            q = self._next_positive_fit(pos, s, cap)
            if s < cap:
                # Zero estimates always fit while capacity remains.
                zlo = int(np.searchsorted(zeros, pos))
                zhi = int(np.searchsorted(zeros, q))
                take = min(zhi - zlo, limit - state.count)
                if take:
                    state.parts.append(zeros[zlo:zlo + take])
                    state.count += take
                    if take < zhi - zlo:
                        pos = int(zeros[zlo + take - 1]) + 1
                        break
            if q >= self.n:
                state.done = True
                pos = self.n
                break
            state.parts.append(np.array([q]))
            state.count += 1
            s = s + float(self.est[q])
            pos = q + 1
        state.pos, state.s = pos, s
        state.flat = None
        return state.indices()

    def solve(self, capacity: float, M: int) -> np.ndarray:
        """Dictionary indices of the chosen set, most probable first."""
        if M <= 0 or capacity <= 0:
            return np.zeros(0, dtype=np.int64)
        if self.heuristic == "fmppf":
            return self._greedy(capacity, M)[:M]
        cands = [Candidate(pw, float(t), float(e)) for pw, t, e in zip(self.passwords, self.true, self.est)]
        if self.heuristic == "dab":
            chosen = dab(cands, capacity, M)
        else:
            chosen = brute_force_pk(PKInstance(cands, capacity, M)).S
        idx = np.array(sorted(self.index_of(pw) for pw in chosen), dtype=np.int64)
        return idx

    def value_curve(self, capacity: float, Ms: np.ndarray) -> np.ndarray:
        """Total true probability of the chosen set for each bound in ``Ms``."""
        Ms = np.asarray(Ms, dtype=np.int64)
        if capacity <= 0 or Ms.size == 0 or Ms.max() <= 0:
            return np.zeros(Ms.shape)
        if self.heuristic != "fmppf":
            return np.array([float(self.true[self.solve(capacity, int(m))].sum()) for m in Ms])
        if math.isinf(capacity):
            return self.cum_true[np.minimum(Ms, self.n)]
        seq = self._greedy(capacity, int(Ms.max()))
        prefix = np.concatenate(([0.0], np.cumsum(self.true[seq])))
        return prefix[np.minimum(Ms, seq.shape[0])]


@dataclass
class _GreedyState:
    parts: list = field(default_factory=list)
    count: int = 0
    pos: int = 0
    s: float = 0.0
    done: bool = False
    flat: np.ndarray | None = None

    def indices(self) -> np.ndarray:
        if self.flat is None:
            self.flat = (np.concatenate(self.parts).astype(np.int64) if self.parts
                         else np.zeros(0, dtype=np.int64))
        return self.flat


@dataclass
class BudgetCurve:
    """Attack budgets at the hours where they change.

    ``hours[i]`` is a candidate attack time; the budgets hold until the next
    entry. ``end`` is the last hour an attack can start (horizon, or the
    hour the user locks the account unaided). ``window_hours`` and
    ``allowances`` describe where the guesses of closed windows go.
    """

    hours: np.ndarray
    M: np.ndarray
    psi_prime: np.ndarray
    end: int
    window_hours: np.ndarray
    allowances: np.ndarray
    K: int

    def at(self, t: int) -> tuple[int, float]:
        if t < 0 or t > self.end:
            raise ValueError(f"hour {t} outside [0, {self.end}]")
        i = int(np.searchsorted(self.hours, t, side="right")) - 1
        return int(self.M[i]), float(self.psi_prime[i])


def budget_curve(trace: LoginTrace, oracle, policy, horizon: int = HORIZON_HOURS) -> BudgetCurve:
    K, Psi = policy.K, policy.Psi
    times = trace.times
    end = horizon if trace.locked_visit is None else min(horizon, int(times[trace.locked_visit]))
    # Visits that close a window strictly before the end of the curve.
    n_closed = int(np.searchsorted(times, end, side="left"))
    if trace.locked_visit is not None:
        n_closed = min(n_closed, trace.locked_visit)
    mistakes = np.zeros(n_closed, dtype=np.int64)
    ests: list[float] = []
    visit_of: list[int] = []
    for j in sorted(trace.mistakes):
        if j >= n_closed:
            break
        wrong = trace.mistakes[j]
        mistakes[j] = len(wrong)
        if not math.isinf(Psi):
            ests.extend(oracle.estimate_popularity(pw) for pw in wrong)
            visit_of.extend([j] * len(wrong))
    # Sequential sums, matching the state machine's running hit count.
    cum = np.concatenate(([0.0], np.cumsum(ests)))
    psi_after = cum[np.searchsorted(np.asarray(visit_of, dtype=np.int64), np.arange(n_closed), side="right")]
    allowances = np.maximum(0, K - 1 - mistakes)
    window_hours = np.concatenate(([0], times[:n_closed - 1] + 1)) if n_closed else np.zeros(0, dtype=np.int64)
    hours = np.concatenate(([0], times[:n_closed] + 1)).astype(np.int64)
    M = (K - 1) + np.concatenate(([0], np.cumsum(allowances)))
    if math.isinf(Psi):
        psi_prime = np.full(hours.shape, math.inf)
    else:
        psi_prime = np.maximum(0.0, Psi - np.concatenate(([0.0], psi_after)))
    keep = hours <= end
    return BudgetCurve(hours[keep], M[keep], psi_prime[keep], end,
                       window_hours.astype(np.int64), allowances, K)


@dataclass
class AttackPlan:
    """Guesses against one account: ``S`` (dictionary indices) then the holdout at ``t_star``."""

    user_id: int
    S: np.ndarray
    holdout: str
    predicted_success: float
    t_star: int
    M: int
    psi_prime: float
    solver: KnapsackSolver = field(repr=False)

    @property
    def knapsack(self) -> list[str]:
        return [self.solver.passwords[i] for i in self.S]

    def guess_hours(self, curve: BudgetCurve) -> np.ndarray:
        """Hour of each guess in ``S``: closed windows first, then the open one."""
        n_closed = int(np.searchsorted(curve.hours, self.t_star, side="right")) - 1
        alloc = curve.allowances[:n_closed]
        slots = np.repeat(curve.window_hours[:n_closed], alloc)
        open_hour = 0 if n_closed == 0 else int(curve.hours[n_closed])
        out = np.full(self.S.shape[0], open_hour, dtype=np.int64)
        k = min(slots.shape[0], out.shape[0])
        out[:k] = slots[:k]
        return out


def make_solver(dist: Distribution, oracle, heuristic: str = "fmppf",
                dictionary_size: int | None = None) -> KnapsackSolver:
    """Solver over the dictionary ``pw_2, pw_3, ...`` (``pw_1`` is the holdout)."""
    end = len(dist) if dictionary_size is None else min(len(dist), dictionary_size + 1)
    passwords = dist.passwords[1:end]
    return KnapsackSolver(passwords, dist.probs[1:end], oracle.estimate_many(passwords), heuristic)


def plan_attack(trace: LoginTrace, dist: Distribution, oracle, policy, horizon: int = HORIZON_HOURS,
                solver: KnapsackSolver | None = None, heuristic: str = "fmppf",
                curve: BudgetCurve | None = None) -> AttackPlan:
    """Best attack time and guesses for one account, holdout fixed to ``pw_1``."""
    if solver is None:
        solver = make_solver(dist, oracle, heuristic)
    if curve is None:
        curve = budget_curve(trace, oracle, policy, horizon)
    holdout = dist.passwords[0]
    p_hold = float(dist.probs[0])
    caps = curve.psi_prime
    # Breakpoints sharing a capacity form runs; each run is one prefix query.
    starts = np.flatnonzero(np.concatenate(([True], caps[1:] != caps[:-1])))
    bounds = np.append(starts, caps.shape[0])
    best_value, best_i = -1.0, 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        values = solver.value_curve(float(caps[a]), curve.M[a:b])
        i = int(np.argmax(values))
        if values[i] > best_value:
            best_value, best_i = float(values[i]), int(a + i)
    M = int(curve.M[best_i])
    cap = float(caps[best_i])
    S = solver.solve(cap, M)
    return AttackPlan(trace.user_id, S, holdout, p_hold + float(solver.true[S].sum()),
                      int(curve.hours[best_i]), M, cap, solver)


@dataclass
class AttackOutcome:
    cracked_hour: int | None
    lock_hour: int | None


def execute_plan(plan: AttackPlan, trace: LoginTrace, curve: BudgetCurve, policy, oracle,
                 verify: bool = False) -> AttackOutcome:
    """When the plan cracks the account, or else when the account locks.

    ``verify`` replays every attempt through the state machine and raises
    :class:`InvariantViolation` if any guess meets a lock before the holdout.
    """
    true_pw = trace.profile.true_pw
    hours = plan.guess_hours(curve)
    k = plan.solver.index_of(true_pw)
    if verify:
        _verify_replay(plan, trace, hours, policy, oracle)
    if k is not None:
        hit = np.flatnonzero(plan.S == k)
        if hit.size:
            return AttackOutcome(int(hours[hit[0]]), None)
    if true_pw == plan.holdout:
        return AttackOutcome(plan.t_star, None)
    return AttackOutcome(None, _lock_after_attack(plan, trace, curve, policy, oracle))


def _lock_after_attack(plan: AttackPlan, trace: LoginTrace, curve: BudgetCurve, policy, oracle) -> int | None:
    """Hour the account locks once the failed attack is followed by the user's visits."""
    K, Psi = policy.K, policy.Psi
    n_closed = int(np.searchsorted(curve.hours, plan.t_star, side="right")) - 1
    in_closed = int(curve.allowances[:n_closed].sum())
    k = max(0, plan.S.shape[0] - in_closed) + 1
    psi = 0.0
    if not math.isinf(Psi):
        for j in sorted(trace.mistakes):
            if j >= n_closed:
                break
            for pw in trace.mistakes[j]:
                psi = psi + oracle.estimate_popularity(pw)
        for i in plan.S:
            psi = psi + float(plan.solver.est[i])
        psi = psi + oracle.estimate_popularity(plan.holdout)
    times = trace.times
    for j in range(n_closed, times.shape[0]):
        if trace.locked_visit is not None and j > trace.locked_visit:
            break
        if k == 0 and j not in trace.mistakes and trace.locked_visit != j:
            continue
        for pw in trace.visit_mistakes(j):
            if k >= K or psi >= Psi:
                return int(times[j])
            k += 1
            if not math.isinf(Psi):
                psi = psi + oracle.estimate_popularity(pw)
        if k >= K or psi >= Psi:
            return int(times[j])
        k = 0
    return None


def _verify_replay(plan: AttackPlan, trace: LoginTrace, hours: np.ndarray, policy, oracle) -> None:
    true_pw = trace.profile.true_pw
    guesses = [(int(h), plan.solver.passwords[i]) for h, i in zip(hours, plan.S)]
    guesses.append((plan.t_star, plan.holdout))
    state = AccountState()
    g = 0
    for j, t in enumerate(trace.times.tolist()):
        while g < len(guesses) and guesses[g][0] <= t:
            state, outcome = _attacker_login(state, guesses[g][1], true_pw, oracle, policy, plan)
            if outcome is LoginOutcome.GRANTED:
                return
            g += 1
        if g >= len(guesses):
            return
        for pw in trace.visit_mistakes(j):
            state, outcome = policy.login(state, pw, true_pw, oracle)
            if outcome is LoginOutcome.LOCKED:
                raise InvariantViolation(f"user {trace.user_id}: own attempt locked before the holdout")
        state, outcome = policy.login(state, true_pw, true_pw, oracle)
        if outcome is not LoginOutcome.GRANTED:
            raise InvariantViolation(f"user {trace.user_id}: locked at visit {j} before the holdout")
    while g < len(guesses):
        state, outcome = _attacker_login(state, guesses[g][1], true_pw, oracle, policy, plan)
        if outcome is LoginOutcome.GRANTED:
            return
        g += 1


def _attacker_login(state, pw, true_pw, oracle, policy, plan):
    state, outcome = policy.login(state, pw, true_pw, oracle)
    if outcome is LoginOutcome.LOCKED:
        raise InvariantViolation(f"user {plan.user_id}: attacker guess {pw!r} hit a locked account")
    return state, outcome


def execute_attack(plans: Sequence[AttackPlan], traces: Sequence[LoginTrace], curves: Sequence[BudgetCurve],
                   policy, oracle, horizon: int = HORIZON_HOURS, verify: bool = False) -> np.ndarray:
    """Cumulative cracked fraction for hours ``1..horizon``."""
    cracked = np.zeros(horizon + 1, dtype=np.int64)
    for plan, trace, curve in zip(plans, traces, curves):
        outcome = execute_plan(plan, trace, curve, policy, oracle, verify)
        if outcome.cracked_hour is not None:
            cracked[min(max(outcome.cracked_hour, 1), horizon)] += 1
    return np.cumsum(cracked)[1:] / max(1, len(plans))
