from __future__ import annotations

import csv
import math
import random

import numpy as np
import pytest
from scipy import stats

from dalock.corpus import Distribution
from dalock.errors import InvariantViolation
from dalock.oracle import oracle_exact
from dalock.throttle import AccountState, LoginOutcome, Policy, k_strikes
from dalock.usersim import (
    ARRIVAL_MEANS,
    TRACE_HEADER,
    AttemptKind,
    LoginTrace,
    TypoModel,
    TypoType,
    UserProfile,
    apply_typo,
    apply_typo_ex,
    draw_attempt,
    export_traces,
    generate_schedule,
    generate_user,
    replay,
    sample_attempt,
    simulate_user,
    simulate_visit,
    user_streams,
)


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


class TestGenerateUser:
    def test_point_mass(self, rng):
        u = generate_user(Distribution(["only"], [1.0]), rng)
        assert u.true_pw == "only" and u.alternates == ("only",) * 5

    def test_arrival_means_uniform(self):
        d = Distribution(["a"], [1.0])
        rng = np.random.default_rng(0)
        draws = [generate_user(d, rng).T_u for _ in range(100_000)]
        for T in ARRIVAL_MEANS:
            assert draws.count(T) / len(draws) == pytest.approx(1 / 6, abs=0.01)

    def test_reproducible(self, desk_dist):
        a = generate_user(desk_dist, user_streams(3, 17)[0])
        b = generate_user(desk_dist, user_streams(3, 17)[0])
        assert a == b


class TestSchedule:
    def test_expected_count(self):
        rng = np.random.default_rng(1)
        counts = [len(generate_schedule(12, 4320, rng)) for _ in range(1000)]
        # Rounding merges a few same-hour visits, so allow the 10% band.
        assert np.mean(counts) == pytest.approx(360, rel=0.10)

    def test_mean_gap(self):
        rng = np.random.default_rng(2)
        gaps = []
        while len(gaps) < 100_000:
            t = generate_schedule(168, 4320, rng).times
            gaps.extend(np.diff(np.concatenate(([0], t))).tolist())
        assert np.mean(gaps) == pytest.approx(168, rel=0.05)

    def test_empty_horizon(self, rng):
        assert len(generate_schedule(12, 0, rng)) == 0

    def test_ordering_and_bounds(self, rng):
        for T in ARRIVAL_MEANS:
            t = generate_schedule(T, 4320, rng).times
            assert np.all(np.diff(t) > 0)
            assert t.size == 0 or (t[0] >= 1 and t[-1] <= 4320)

    def test_stationary(self):
        rng = np.random.default_rng(3)
        bins = np.zeros(6)
        for _ in range(500):
            t = generate_schedule(24, 4320, rng).times
            bins += np.bincount((t - 1) // 720, minlength=6)
        assert stats.chisquare(bins).pvalue > 0.001

    def test_bad_mean(self, rng):
        with pytest.raises(ValueError):
            generate_schedule(0, 10, rng)


class TestTypos:
    def test_caplock(self, rng):
        assert apply_typo("aB1", TypoType.CAPLOCK, rng) == "Ab1"

    def test_shift_first(self, rng):
        assert apply_typo("password", TypoType.SHIFT_FIRST, rng) == "Password"

    @pytest.mark.parametrize("typo", list(TypoType))
    def test_never_identity_and_bounded(self, typo):
        r = random.Random(4)
        for pw in ("password", "Secret1!", "aa", "x", "1234"):
            out, applied = apply_typo_ex(pw, typo, r)
            assert out != pw
            if applied in (TypoType.INSERT1, TypoType.DELETE1, TypoType.REPLACE1,
                           TypoType.TRANSPOSE, TypoType.SHIFT_FIRST):
                assert levenshtein(out, pw) <= 2
            if applied in (TypoType.INSERT2, TypoType.DELETE2, TypoType.REPLACE2):
                assert levenshtein(out, pw) <= 2

    def test_fallback_for_short(self):
        out, applied = apply_typo_ex("a", TypoType.TRANSPOSE, random.Random(0))
        assert applied is TypoType.INSERT1 and len(out) == 2 and "a" in out
        out, applied = apply_typo_ex("1", TypoType.SHIFT_FIRST, random.Random(0))
        assert applied is TypoType.INSERT1

    def test_table_renormalized(self):
        p = TypoModel().probabilities
        assert p.sum() == pytest.approx(1.0)
        assert p[list(TypoType).index(TypoType.REPLACE1)] == pytest.approx(31 / 101)


class TestAttempts:
    profile = UserProfile("Password1", ("Dragon22", "Monkey33", "Shadow44", "Master55", "Qwerty66"), 24)

    def test_no_mistakes(self, rng):
        model = TypoModel(mistake_rate=0.0)
        assert {sample_attempt(self.profile, model, rng) for _ in range(200)} == {"Password1"}

    def test_kinds_consistent(self):
        r = random.Random(5)
        model = TypoModel()
        for _ in range(20_000):
            a = draw_attempt(self.profile, model, r)
            if a.kind is AttemptKind.CORRECT:
                assert a.submitted == self.profile.true_pw
            elif a.kind is AttemptKind.RECALL:
                assert a.submitted in self.profile.alternates
            else:
                assert a.typo is not None
                assert a.submitted not in (self.profile.true_pw,) or a.kind is AttemptKind.RECALL_TYPO

    def test_model_validation(self):
        with pytest.raises(ValueError):
            TypoModel(mistake_rate=1.0)
        with pytest.raises(ValueError):
            TypoModel(typo_given_mistake=0.5)


# Long, far-apart strings keep typos of one from producing the other.
TOY = Distribution(["aaaaaaaa", "bbbbbbbb"], [0.9, 0.1])
TOY_PROFILE = UserProfile("bbbbbbbb", ("aaaaaaaa",) * 5, 24)


class TestVisit:
    def test_no_mistakes_single_grant(self, rng):
        state, rec = simulate_visit(TOY_PROFILE, AccountState(), Policy(10, 0.5), oracle_exact(TOY),
                                    TypoModel(mistake_rate=0.0), rng)
        assert [o for _, o, _ in rec.attempts] == [LoginOutcome.GRANTED]
        assert state == AccountState()

    def test_locked_no_op(self, rng):
        locked = AccountState(10, 0.0)
        state, rec = simulate_visit(TOY_PROFILE, locked, Policy(10, 0.5), oracle_exact(TOY), TypoModel(), rng)
        assert state == locked and rec.attempts == []

    def test_hitting_probability(self):
        model = TypoModel()
        # Per visit, the first non-typo event decides: an unmistyped recall of
        # the heavy alternate locks, a correct entry ends the visit.
        recall = model.mistake_rate * model.recall_given_mistake * (1 - model.recall_typo_rate)
        correct = 1 - model.mistake_rate
        q = recall / (recall + correct)
        visits, users = 20, 2000
        expected = 1 - (1 - q) ** visits
        policy, oracle = Policy(10, 0.5), oracle_exact(TOY)
        r = random.Random(6)
        locked = 0
        for _ in range(users):
            state = AccountState()
            for _ in range(visits):
                state, _ = simulate_visit(TOY_PROFILE, state, policy, oracle, model, r)
            locked += policy.is_locked(state)
        sd = math.sqrt(expected * (1 - expected) / users)
        assert abs(locked / users - expected) <= 3 * sd


def reference_trace(user_id, dist, policy, oracle, seed, horizon):
    """Visit-by-visit rebuild of a trace from the same per-user streams."""
    bulk, r = user_streams(seed, user_id)
    profile = generate_user(dist, bulk)
    times = generate_schedule(profile.T_u, horizon, bulk).times
    state = AccountState()
    mistakes, locked_visit = {}, None
    for j in range(times.size):
        state, rec = simulate_visit(profile, state, policy, oracle, TypoModel(), r)
        wrong = tuple(s for s, o, _ in rec.attempts if o is LoginOutcome.DENIED)
        if wrong:
            mistakes[j] = wrong
        if rec.outcome is LoginOutcome.LOCKED:
            locked_visit = j
            break
    return profile, times, mistakes, locked_visit


class TestSimulateUser:
    @pytest.mark.parametrize("policy", [Policy(10, 2**-7), k_strikes(3), Policy(2, 0.01)])
    def test_matches_visit_by_visit(self, desk_dist, desk_oracle, policy):
        for uid in range(150):
            trace = simulate_user(uid, desk_dist, policy, desk_oracle, seed=8)
            profile, times, mistakes, locked_visit = reference_trace(uid, desk_dist, policy, desk_oracle, 8, 4320)
            assert trace.profile == profile
            assert np.array_equal(trace.times, times)
            assert trace.mistakes == mistakes
            assert trace.locked_visit == locked_visit

    def test_deterministic(self, desk_dist, desk_oracle):
        p = Policy(10, 2**-7)
        a = simulate_user(42, desk_dist, p, desk_oracle, seed=1)
        b = simulate_user(42, desk_dist, p, desk_oracle, seed=1)
        assert a.mistakes == b.mistakes and np.array_equal(a.times, b.times)

    def test_no_mistakes_never_locks(self, desk_dist, desk_oracle):
        model = TypoModel(mistake_rate=0.0)
        for uid in range(50):
            t = simulate_user(uid, desk_dist, k_strikes(1), desk_oracle, model, seed=0)
            assert not t.locked and t.mistakes == {}

    def test_policy_independent_prefix(self, desk_dist, desk_oracle):
        for uid in range(200):
            strict = simulate_user(uid, desk_dist, Policy(3, 2**-9), desk_oracle, seed=2)
            loose = simulate_user(uid, desk_dist, k_strikes(10), desk_oracle, seed=2)
            stop = strict.locked_visit if strict.locked else len(strict.times)
            for j in range(stop):
                assert strict.visit_mistakes(j) == loose.visit_mistakes(j)


class TestReplay:
    def test_consistent_with_simulation(self, desk_dist, desk_oracle):
        policy = Policy(10, 2**-7)
        for uid in range(300):
            trace = simulate_user(uid, desk_dist, policy, desk_oracle, seed=3)
            records = replay(trace, policy, desk_oracle)
            if trace.locked:
                assert len(records) == trace.locked_visit + 1
                assert records[-1].outcome is LoginOutcome.LOCKED
            else:
                assert len(records) == len(trace.times)
                assert all(r.outcome is LoginOutcome.GRANTED for r in records)

    def test_missing_lock_detected(self, desk_dist, desk_oracle):
        profile = UserProfile("pw", ("x",) * 5, 24)
        bogus = LoginTrace(0, profile, np.array([5, 9]), {}, locked_visit=0)
        with pytest.raises(InvariantViolation):
            replay(bogus, k_strikes(3), desk_oracle)

    def test_export(self, tmp_path, desk_dist, desk_oracle):
        policy = k_strikes(3)
        traces = [simulate_user(u, desk_dist, policy, desk_oracle, seed=0) for u in range(20)]
        path = tmp_path / "t.csv"
        export_traces(traces, policy, desk_oracle, path)
        raw = path.read_bytes()
        assert b"\r\n" not in raw
        rows = list(csv.reader(raw.decode().splitlines()))
        assert tuple(rows[0]) == TRACE_HEADER
        expected = sum(len(r.attempts) for t in traces for r in replay(t, policy, desk_oracle))
        assert len(rows) - 1 == expected
