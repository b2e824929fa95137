from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalock.corpus import empirical_distribution, sample_passwords, synthesize_zipf
from dalock.errors import SketchError
from dalock.sketch import CountSketch, HashFamily, build_sketch, fingerprint, fingerprints, initialize


class TestInitialize:
    def test_desk_size(self):
        s = initialize(5, 10**6, 0)
        assert s.nbytes == 20_000_000

    def test_single_cell(self):
        s = initialize(1, 1, 0)
        assert s.table.shape == (1, 1) and s.table[0, 0] == 0 and s.total == 0
        assert not s.privatized

    def test_same_parameters_same_hashes(self):
        a, b = HashFamily(5, 1000, 9), HashFamily(5, 1000, 9)
        keys = fingerprints([f"pw{i}" for i in range(200)])
        assert np.array_equal(a.columns_many(keys), b.columns_many(keys))
        assert np.array_equal(a.signs_many(keys), b.signs_many(keys))

    @pytest.mark.parametrize("d, w", [(0, 5), (5, 0), (1, 2**32), (2**20, 2**20)])
    def test_bad_dimensions(self, d, w):
        with pytest.raises(SketchError):
            CountSketch(d, w)


class TestAddRemove:
    def test_single_add(self):
        assert CountSketch(5, 100).add("x").estimate("x") == 1

    def test_repeated_add(self):
        s = CountSketch(5, 100)
        for _ in range(13):
            s.add("x")
        assert s.estimate("x") == 13

    def test_corpus_total(self):
        c = synthesize_zipf(500, 1.0, 20_000)
        assert CountSketch(5, 1000).add_corpus(c).total_freq() == c.total

    def test_remove_inverse(self):
        s = CountSketch(5, 100, 3).add("x").remove("x")
        assert s.same_state(CountSketch(5, 100, 3))

    def test_remove_other(self):
        s = CountSketch(5, 10_000).add("x").add("y").remove("y")
        assert s.estimate("x") == 1

    def test_remove_empty(self):
        with pytest.raises(SketchError):
            CountSketch(5, 100).remove("x")

    def test_vector_add_matches_scalar(self):
        pws = [f"p{i}" for i in range(300)]
        counts = np.arange(300) % 7
        a = CountSketch(5, 512, 4).add_many(pws, counts)
        b = CountSketch(5, 512, 4)
        for pw, c in zip(pws, counts):
            b.add(pw, int(c))
        assert a.same_state(b)
        np.testing.assert_array_equal(a.estimate_many(pws), [a.estimate(pw) for pw in pws])

    def test_linearity_per_row(self):
        s = CountSketch(5, 64, 1)
        key = fingerprint("x")
        cols, sign = s.hashes.columns(key), s.hashes.sign(key)
        before = s.table.copy()
        s.add("x")
        delta = s.table.astype(np.int64) - before
        for row, col in enumerate(cols):
            assert delta[row, col] == sign
        assert np.abs(delta).sum() == 5


class TestEstimate:
    def test_empty_is_zero(self):
        assert CountSketch(5, 100).estimate("anything") == 0

    def test_even_rows_use_midpoint(self):
        s = CountSketch(4, 50, 2)
        key = fingerprint("x")
        sign = s.hashes.sign(key)
        for row, (col, value) in enumerate(zip(s.hashes.columns(key), (1, 7, 3, 100))):
            s.table[row, col] = value * sign
        assert s.estimate("x") == 5.0

    def test_zipf_top_hundred(self):
        dist = empirical_distribution(synthesize_zipf(10_000, 1.0, 1_000_000))
        stream = sample_passwords(dist, np.random.default_rng(5), 100_000)
        exact = Counter(stream)
        s = CountSketch(5, 10**6, 0)
        s.add_many(stream)
        for pw, count in exact.most_common(100):
            assert abs(s.estimate(pw) - count) <= 3


class TestPrivacy:
    def test_scale(self):
        assert CountSketch(5, 10).noise_scale(0.1) == pytest.approx(60.0)

    def test_total_noise_is_centered(self):
        # Total noise is independent of table size; a small table keeps this cheap.
        n = 1000
        totals = []
        for i in range(10_000):
            s = CountSketch(5, 2, 0)
            s.total = n
            s.privatize(0.1, np.random.default_rng(i))
            totals.append(s.total_freq())
        assert abs(np.mean(totals) - n) <= 3 * 6 / (0.1 * 100)

    def test_mean_absolute_noise(self):
        s = CountSketch(5, 20_000, 0).privatize(0.1, np.random.default_rng(11))
        assert np.mean(np.abs(s.table)) == pytest.approx(60.0, rel=0.02)

    def test_state_errors(self):
        s = CountSketch(5, 10).add("x").privatize(1.0, np.random.default_rng(0))
        with pytest.raises(SketchError):
            s.privatize(1.0, np.random.default_rng(0))
        with pytest.raises(SketchError):
            s.add("y")
        with pytest.raises(SketchError):
            s.remove("x")
        with pytest.raises(SketchError):
            CountSketch(5, 10).privatize(0.0, np.random.default_rng(0))

    def test_infinite_epsilon_skips_noise(self):
        c = synthesize_zipf(100, 1.0, 1000)
        s = build_sketch(c, 5, 1000, 0, math.inf)
        assert not s.privatized and s.table.dtype == np.int32


class TestProbability:
    def test_single_item(self):
        assert CountSketch(5, 100).add("x").estimated_probability("x") == 1.0

    def test_unseen(self):
        assert CountSketch(5, 10**6).add("x").estimated_probability("y") == 0.0

    def test_zipf_top(self):
        c = synthesize_zipf(100_000, 1.0, 1_000_000)
        s = build_sketch(c, 5, 10**6, 0)
        top = c.ranked().passwords[0]
        assert s.estimated_probability(top) == pytest.approx(c.ranked().counts[0] / c.total, abs=1e-3)

    def test_nonpositive_total(self):
        s = CountSketch(5, 10).add("x").privatize(0.5, np.random.default_rng(0))
        s.total = -1.0
        with pytest.raises(SketchError):
            s.estimated_probability("x")

    def test_clamped(self):
        s = CountSketch(1, 1).add("a", 3)
        # With one cell every password shares it; signs decide the estimate.
        for pw in ("a", "b", "c", "d"):
            assert 0.0 <= s.estimated_probability(pw) <= 1.0


class TestSerialization:
    @pytest.mark.parametrize("private", [False, True])
    def test_round_trip(self, tmp_path, private):
        s = CountSketch(3, 257, 42).add_many(["a", "b", "c"], [5, 1, 2])
        if private:
            s.privatize(0.5, np.random.default_rng(1))
        path = tmp_path / "s.bin"
        s.save(path)
        loaded = CountSketch.load(path)
        assert loaded.same_state(s)
        assert loaded.estimate("a") == s.estimate("a")
        assert loaded.to_bytes() == s.to_bytes()

    def test_bad_input(self):
        data = CountSketch(2, 4).to_bytes()
        with pytest.raises(SketchError):
            CountSketch.from_bytes(b"XXXXXX" + data[6:])
        with pytest.raises(SketchError):
            CountSketch.from_bytes(data[:10])
        with pytest.raises(SketchError):
            CountSketch.from_bytes(data[:-1])


def test_determinism_bit_identical():
    c = synthesize_zipf(2000, 1.0, 50_000)
    a, b = build_sketch(c, 5, 4096, 8), build_sketch(c, 5, 4096, 8)
    assert a.table.tobytes() == b.table.tobytes()
    assert not np.array_equal(a.table, build_sketch(c, 5, 4096, 9).table)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=30), st.integers(0, 2**63 - 1), st.integers(1, 2**31))
def test_scalar_and_vector_hashes_agree(pw, seed, w):
    h = HashFamily(5, w, seed)
    key = fingerprint(pw)
    keys = np.array([key], dtype=np.uint64)
    assert h.columns_many(keys)[:, 0].tolist() == h.columns(key)
    assert all(0 <= c < w for c in h.columns(key))
    assert int(h.signs_many(keys)[0]) == h.sign(key)


@settings(max_examples=50, deadline=None)
@given(st.text(min_size=1, max_size=12), st.integers(1, 50))
def test_single_item_exactness(pw, n):
    s = CountSketch(5, 97, 3)
    s.add(pw, n)
    assert s.estimate(pw) == n
