from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from attrgt.core import ReassignmentMatrix
from attrgt.errors import ConfigError
from attrgt.reassign import (ReassignConfig, binom_logpmf, log_significance_probability,
                             max_achievable_accuracy, reassign_label, reassign_labels, significance_probability,
                             tail_start)

from oracles import exact_tail


class TestReassignment:
    def test_identity_keeps_labels(self):
        cfg = ReassignConfig.binary(1.0, seed=3)
        assert reassign_labels([0, 1, 1, 0], cfg) == [0, 1, 1, 0]

    def test_r_zero_flips(self):
        cfg = ReassignConfig.binary(0.0, seed=3)
        assert reassign_labels([0, 1, 1, 0], cfg) == [1, 0, 0, 1]

    def test_depends_only_on_seed_index_label(self):
        cfg = ReassignConfig.binary(0.6, seed=9)
        full = reassign_labels([0, 1] * 50, cfg)
        assert [reassign_label(y, i, cfg) for i, y in reversed(list(enumerate([0, 1] * 50)))][::-1] == full

    @pytest.mark.parametrize("r", [0.5, 0.7, 0.9])
    def test_keep_frequency(self, r):
        cfg = ReassignConfig.binary(r, seed=1)
        n = 20000
        kept = np.mean(np.array(reassign_labels([0] * n, cfg)) == 0)
        # 5 standard errors
        assert abs(kept - r) < 5 * np.sqrt(r * (1 - r) / n)

    def test_multiclass_frequencies(self):
        m = ReassignmentMatrix([[0.2, 0.3, 0.5], [1 / 3, 1 / 3, 1 / 3], [0.0, 0.0, 1.0]])
        cfg = ReassignConfig(m, seed=4)
        out = np.array(reassign_labels([0] * 30000, cfg))
        freq = np.bincount(out, minlength=3) / out.size
        assert np.allclose(freq, [0.2, 0.3, 0.5], atol=0.015)
        assert set(reassign_labels([2] * 100, cfg)) == {2}

    def test_bad_label(self):
        with pytest.raises(ConfigError):
            reassign_label(2, 0, ReassignConfig.binary(0.5))

    @pytest.mark.parametrize("r,expected", [(0.5, 0.5), (0.8, 0.8), (0.2, 0.8), (1.0, 1.0)])
    def test_p_star(self, r, expected):
        assert max_achievable_accuracy(ReassignmentMatrix.binary(r)) == pytest.approx(expected)

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=4), st.data())
    def test_bayes_accuracy_never_exceeds_p_star(self, weights, data):
        k = len(weights)
        rows = []
        for _ in range(k):
            w = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k)))
            rows.append(w / w.sum())
        prior = np.array(weights) / np.sum(weights)
        m = ReassignmentMatrix(rows)
        # a classifier that sees the original label predicts argmax_j R[y, j]
        bayes = float(np.sum(prior * m.rows.max(axis=1)))
        assert bayes <= max_achievable_accuracy(m) + 1e-12


class TestBinomial:
    def test_documented_vector(self):
        # floor(0.8 * 10) = 8: (45 + 10 + 1) / 1024
        assert abs(significance_probability(10, 0.5, 0.8) - 0.0546875) < 1e-12

    @pytest.mark.parametrize("n,p_star,p", [
        (10, 0.5, 0.8), (500, 0.5, 0.95), (1000, 0.3, 0.35), (200, 0.5, 0.5), (50, 0.9, 0.2),
        (37, 0.123, 0.9), (1, 0.5, 1.0), (300, 0.75, 0.99), (2000, 0.5, 0.52),
    ])
    def test_matches_exact_rational_oracle(self, n, p_star, p):
        exact = exact_tail(n, p_star, p)
        got = significance_probability(n, p_star, p)
        assert abs(Fraction(got) - exact) <= Fraction(1, 10**10) * exact

    def test_tiny_tail_log_domain(self):
        exact = exact_tail(500, 0.5, 0.95)
        assert float(exact) < 1e-80
        lp = log_significance_probability(500, 0.5, 0.95)
        import mpmath

        mpmath.mp.dps = 50
        assert abs(lp - float(mpmath.log(mpmath.mpf(exact.numerator) / exact.denominator))) < 1e-9

    def test_far_tail_stays_positive(self):
        # about 1e-3010: underflows in linear space, finite in log space
        lp = log_significance_probability(10000, 0.5, 1.0)
        assert lp == pytest.approx(10000 * np.log(0.5), rel=1e-12)
        assert significance_probability(10000, 0.5, 1.0) == 0.0

    def test_tail_start_guards_float_noise(self):
        assert tail_start(500, 0.95) == 475
        assert tail_start(10, 0.8) == 8
        assert tail_start(10, 0.79) == 7

    @given(st.integers(1, 400), st.floats(0.01, 0.99), st.floats(0.0, 1.0))
    @settings(max_examples=200)
    def test_against_scipy(self, n, p_star, p):
        k0 = tail_start(n, p)
        ref = stats.binom.sf(k0 - 1, n, p_star)
        got = significance_probability(n, p_star, p)
        if ref > 1e-250:
            assert got == pytest.approx(ref, rel=1e-9, abs=1e-300)

    @given(st.integers(1, 300), st.floats(0.01, 0.99))
    def test_logpmf_sums_to_one(self, n, p):
        lp = binom_logpmf(np.arange(n + 1), n, p)
        assert np.exp(lp).sum() == pytest.approx(1.0, rel=1e-12)

    @given(st.integers(1, 300), st.floats(0.01, 0.99), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_monotone_in_accuracy(self, n, p_star, a, b):
        lo, hi = sorted((a, b))
        assert significance_probability(n, p_star, hi) <= significance_probability(n, p_star, lo) * (1 + 1e-12)

    @pytest.mark.parametrize("args", [(0, 0.5, 0.5), (10, 1.5, 0.5), (10, 0.5, -0.1)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            significance_probability(*args)


@pytest.mark.parametrize("args,expected", [
    ((10, 1.0, 0.5), 1.0), ((10, 0.0, 0.5), 0.0), ((10, 0.0, 0.0), 1.0), ((10, 0.5, 0.0), 1.0),
])
def test_degenerate_probabilities(args, expected):
    assert significance_probability(*args) == expected
