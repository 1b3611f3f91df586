import functools
import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from attrgt.core import AttributionMap, EffectiveRegion
from attrgt.errors import ConfigError, DimensionError, UndefinedMetricError
from attrgt.metrics import (EnumerableTask, ShapleyInputs, attr_percent, er_percent, expected_accuracy_given,
                            normalized_shapley, precision_recall, round_half_up, selection_envelope,
                            shapley_envelope, shapley_values, topk_select)

scores = arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e6, 1e6, allow_nan=False))


class TestAttrPercent:
    def test_examples(self):
        assert attr_percent(np.array([0.5, -1.5, 1.0, 0.0]), EffectiveRegion.of([0, 2])) == 0.5
        assert attr_percent(np.array([1.0, -1.0, 2.0]), EffectiveRegion()) == 0.0
        assert attr_percent(AttributionMap("x", np.array([1.0, -1.0, 2.0])), [0, 1, 2]) == 1.0

    def test_all_zero_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            attr_percent(np.zeros(4), [0])

    def test_out_of_range(self):
        with pytest.raises(DimensionError):
            attr_percent(np.ones(3), [3])

    @given(scores, st.data())
    def test_partition_sums_to_one(self, s, data):
        if not np.abs(s).sum() > 0:
            return
        labels = data.draw(st.lists(st.integers(0, 3), min_size=s.size, max_size=s.size))
        parts = [[i for i, l in enumerate(labels) if l == p] for p in range(4)]
        assert abs(sum(attr_percent(s, p) for p in parts) - 1.0) <= 1e-12

    @given(scores, st.floats(1e-3, 1e3), st.data())
    def test_scale_invariant(self, s, c, data):
        if not np.abs(s).sum() > 0:
            return
        f = data.draw(st.sets(st.integers(0, s.size - 1)))
        assert attr_percent(c * s, f) == pytest.approx(attr_percent(s, f), rel=1e-12, abs=1e-15)

    @given(st.integers(1, 50), st.data())
    def test_uniform_equals_er_percent(self, d, data):
        f = data.draw(st.sets(st.integers(0, d - 1)))
        assert attr_percent(np.ones(d), f) == pytest.approx(er_percent(f, d), abs=1e-15)


def test_er_percent():
    assert er_percent([], 10) == 0.0 and er_percent(range(10), 10) == 1.0 and er_percent([0, 1, 2, 3], 16) == 0.25
    with pytest.raises(ConfigError):
        er_percent([], 0)


class TestPrecisionRecall:
    def test_examples(self):
        assert precision_recall({1, 2, 3}, {2, 3, 4, 5}) == (2 / 3, 0.5)
        assert precision_recall({1, 2}, {1, 2}) == (1.0, 1.0)
        assert precision_recall({0}, {1}) == (0.0, 0.0)

    def test_undefined(self):
        with pytest.raises(UndefinedMetricError):
            precision_recall(set(), {1})
        with pytest.raises(UndefinedMetricError):
            precision_recall({1}, set())


class TestTopK:
    def test_examples(self):
        assert set(topk_select(np.array([3.0, -5.0, 1.0]), 2)) == {0, 1}
        assert set(topk_select(np.array([2.0, 2.0, 2.0]), 1)) == {0}
        assert set(topk_select(np.array([2.0, 1.0, 3.0]), 3)) == {0, 1, 2}
        with pytest.raises(ConfigError):
            topk_select(np.ones(3), 0)

    @given(st.lists(st.integers(-20, 20), min_size=1, max_size=30), st.data())
    def test_invariant_under_strictly_monotone_transforms(self, ints, data):
        s = np.array(ints, dtype=np.float64)
        k = data.draw(st.integers(1, s.size))
        sign = np.where(np.array(data.draw(st.lists(st.booleans(), min_size=s.size, max_size=s.size))), 1, -1)
        base = set(topk_select(s, k))
        a = np.abs(s)
        for f in (lambda v: np.exp(v / 7.0), lambda v: v**3 + 2, lambda v: np.log1p(v), lambda v: 10 * v + 0.5):
            assert set(topk_select(sign * f(a), k)) == base

    @given(scores, st.data())
    def test_selects_largest(self, s, data):
        k = data.draw(st.integers(1, s.size))
        sel = topk_select(s, k).as_array()
        rest = np.setdiff1d(np.arange(s.size), sel)
        if rest.size:
            assert np.abs(s[sel]).min() >= np.abs(s[rest]).max()


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999, -0.5)] == [1, 2, 3, 2, 0]


# --------------------------------------------------------------------------
# selection envelope versus a brute-force assignment oracle

def _best_hits_table(max_len=6):
    """best[n][f][k]: most correlating tokens any size-k subset of an n-token review (f correlating) holds."""
    best = {}
    for n in range(max_len + 1):
        for f in range(n + 1):
            for k in range(n + 1):
                best[n, f, k] = max(sum(1 for t in sub if t < f) for sub in itertools.combinations(range(n), k))
    return best


BEST = _best_hits_table(10)


def _oracle(budget, fc, lengths, level):
    total = sum(fc)
    if level == "instance":
        rate = budget / sum(lengths)
        ks = [min(n, int(np.floor(rate * n + 0.5))) for n in lengths]
        hits = sum(BEST[n, f, k] for n, f, k in zip(lengths, fc, ks))
        return hits / sum(ks), hits / total
    best_hits = _dataset_best(tuple(fc), tuple(lengths))[min(budget, sum(lengths))]
    return best_hits / budget, best_hits / total


@functools.lru_cache(maxsize=None)
def _dataset_best(fc, lengths):
    """Dataset level: best hits for every total spend, over all splits of the spend across reviews."""
    best = [0] * (sum(lengths) + 1)
    for ks in itertools.product(*[range(n + 1) for n in lengths]):
        s = sum(ks)
        best[s] = max(best[s], sum(BEST[n, f, k] for n, f, k in zip(lengths, fc, ks)))
    return best


def _close(a, b, tol=1e-12):
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol


class TestSelectionEnvelope:
    def test_examples(self):
        assert selection_envelope(80, [100], [1000]) == (1.0, 0.8)
        assert selection_envelope(125, [100], [1000]) == (0.8, 1.0)

    def test_spec_two_review_case(self):
        # %Sel = 0.1 of 20 tokens: one token per review, only the first review can hit
        assert selection_envelope(2, [2, 1], [10, 10], "instance") == _oracle(2, [2, 1], [10, 10], "instance")
        assert selection_envelope(2, [2, 0], [10, 10], "instance") == (0.5, 0.5)

    def test_all_three_review_cases_up_to_length_six(self):
        checked = 0
        for lengths in itertools.product(range(1, 7), repeat=3):
            for fc in itertools.product(*[range(n + 1) for n in lengths]):
                if sum(fc) == 0:
                    continue
                for budget in range(1, sum(lengths) + 1):
                    want_d = _oracle(budget, fc, lengths, "dataset")
                    got_d = selection_envelope(budget, fc, lengths, "dataset")
                    assert _close(got_d, want_d), (budget, fc, lengths)
                    rate = budget / sum(lengths)
                    if all(int(np.floor(rate * n + 0.5)) == 0 for n in lengths):
                        with pytest.raises(UndefinedMetricError):
                            selection_envelope(budget, fc, lengths, "instance")
                        continue
                    got_i = selection_envelope(budget, fc, lengths, "instance")
                    assert _close(got_i, _oracle(budget, fc, lengths, "instance")), (budget, fc, lengths)
                    checked += 1
        assert checked > 100_000

    @given(st.integers(1, 20), st.integers(0, 20), st.integers(1, 5), st.data())
    def test_levels_agree_for_identical_reviews(self, n, f, m, data):
        f = min(f, n)
        if f == 0:
            return
        per = data.draw(st.integers(1, n))
        budget = per * m
        assert selection_envelope(budget, [f] * m, [n] * m, "dataset") == pytest.approx(
            selection_envelope(budget, [f] * m, [n] * m, "instance"), abs=1e-12)

    def test_validation(self):
        with pytest.raises(ConfigError):
            selection_envelope(0, [1], [2])
        with pytest.raises(ConfigError):
            selection_envelope(1, [3], [2])
        with pytest.raises(ConfigError):
            selection_envelope(1, [1], [2], "galaxy")
        with pytest.raises(UndefinedMetricError):
            selection_envelope(1, [0], [2])


# --------------------------------------------------------------------------
# Shapley values

class TestShapley:
    def test_examples(self):
        assert shapley_values(ShapleyInputs(0.9, 0.6)) == pytest.approx((0.35, 0.05), abs=1e-15)
        assert shapley_values(ShapleyInputs(1.0, 0.5)) == (0.5, 0.0)
        assert shapley_values(ShapleyInputs(0.5, 0.5)) == (0.0, 0.0)

    def test_uninformative_model_cannot_be_normalized(self):
        with pytest.raises(UndefinedMetricError):
            normalized_shapley(ShapleyInputs(0.5, 0.5))
        with pytest.raises(ConfigError):
            ShapleyInputs(1.2, 0.5)

    @given(st.floats(0.5001, 1.0), st.floats(0.5, 1.0))
    def test_efficiency(self, p, a_fo):
        a_fo = min(a_fo, p)
        vm, vo = shapley_values(ShapleyInputs(p, a_fo))
        assert abs((vm + vo) - (p - 0.5)) <= 1e-12

    @given(st.floats(0.5001, 1.0), st.floats(0.5, 1.0), st.floats(0.5, 1.0))
    def test_normalized_inside_envelope(self, p, a_fo, r):
        a_fo = min(a_fo, p)
        r = max(r, a_fo)
        nm, no = normalized_shapley(ShapleyInputs(p, a_fo))
        lower, upper = shapley_envelope(p, r)
        assert nm >= lower - 1e-12 and no <= upper + 1e-12
        assert lower + upper == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("r", [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    def test_envelope_exact_at_p_one(self, r):
        assert shapley_envelope(1.0, r) == (1.5 - r, r - 0.5)

    def test_envelope_examples(self):
        assert shapley_envelope(1.0, 0.5) == (1.0, 0.0)
        assert shapley_envelope(0.75, 0.6) == pytest.approx((0.8, 0.2), abs=1e-12)
        with pytest.raises(UndefinedMetricError):
            shapley_envelope(0.5, 0.6)


# --------------------------------------------------------------------------
# a(F)

def _hand_a(feats, support, g):
    """Appendix-style double draw: P(x, y) P(x', y' | x'_F = x_F) 1[g(x) = y']."""
    total = Fraction(0)
    for x, _, px in support:
        cell = [(x2, y2, p2) for x2, y2, p2 in support if all(x2[i] == x[i] for i in feats)]
        mass = sum(p for _, _, p in cell)
        if mass == 0:
            continue
        total += px * sum(p2 for _, y2, p2 in cell if g(x) == y2) / mass
    return total


POINTS = [((a, b), y) for a in (0, 1) for b in (0, 1) for y in (0, 1)]
SUBSETS = [(), (0,), (1,), (0, 1)]


def _all_classifiers():
    for table in itertools.product((0, 1), repeat=4):
        yield lambda x, t=table: t[2 * x[0] + x[1]]


weights = st.lists(st.integers(0, 6), min_size=8, max_size=8).filter(lambda w: sum(w) > 0)


class TestExpectedAccuracy:
    def test_examples(self):
        # x1 = y, x2 a fair coin, g = x1
        sup = [((y, c), y, Fraction(1, 4)) for y in (0, 1) for c in (0, 1)]
        task = EnumerableTask(sup, lambda x: x[0])
        assert expected_accuracy_given([], task) == Fraction(1, 2)
        assert expected_accuracy_given([0], task) == 1
        assert expected_accuracy_given([1], task) == Fraction(1, 2)
        assert expected_accuracy_given([0, 1], task) == 1

    @given(weights)
    @settings(max_examples=150)
    def test_matches_hand_enumeration_for_every_classifier(self, w):
        total = sum(w)
        sup = [(x, y, Fraction(wi, total)) for (x, y), wi in zip(POINTS, w)]
        for g in _all_classifiers():
            task = EnumerableTask(sup, g)
            for f in SUBSETS:
                assert expected_accuracy_given(f, task) == _hand_a(f, sup, g)
            # all features: plain accuracy of g
            assert expected_accuracy_given((0, 1), task) == sum(p for x, y, p in sup if g(x) == y)

    @staticmethod
    def _bayes(sup):
        score = {}
        for x, y, p in sup:
            score[x] = score.get(x, 0) + (p if y == 1 else -p)
        return lambda x: int(score.get(x, 0) > 0)

    @given(weights)
    @settings(max_examples=300)
    def test_full_refinement_never_loses_for_bayes_optimal_g(self, w):
        total = sum(w)
        sup = [(x, y, Fraction(wi, total)) for (x, y), wi in zip(POINTS, w)]
        task = EnumerableTask(sup, self._bayes(sup))
        full = expected_accuracy_given((0, 1), task)
        for f in SUBSETS:
            assert expected_accuracy_given(f, task) <= full

    def test_intermediate_refinement_can_lose(self):
        # A documented counterexample: knowing x1 lowers a(F) below a(empty) even for the Bayes g.
        w = {((0, 0), 1): 459, ((0, 0), 0): 441, ((0, 1), 0): 100,
             ((1, 0), 1): 245, ((1, 0), 0): 255, ((1, 1), 1): 245, ((1, 1), 0): 255}
        total = sum(w.values())
        sup = [(x, y, Fraction(v, total)) for (x, y), v in w.items()]
        task = EnumerableTask(sup, self._bayes(sup))
        assert expected_accuracy_given((0,), task) < expected_accuracy_given((), task)
        assert expected_accuracy_given((0, 1), task) >= expected_accuracy_given((), task)

    def test_shapley_example_via_enumerable_task(self):
        # y uniform; m = y; o = y w.p. 3/4; z uniform on 0..9; g = m unless z == 9
        sup = []
        for y in (0, 1):
            for o in (0, 1):
                for z in range(10):
                    sup.append(((y, o, z), y, Fraction(1, 2) * (Fraction(3, 4) if o == y else Fraction(1, 4))
                                * Fraction(1, 10)))
        task = EnumerableTask(sup, lambda x: x[0] if x[2] < 9 else 1 - x[0])
        a = {key: expected_accuracy_given(f, task) for key, f in
             {"none": (), "m": (0, 2), "o": (1,), "all": (0, 1, 2)}.items()}
        assert a == {"none": Fraction(1, 2), "m": Fraction(9, 10), "o": Fraction(3, 5), "all": Fraction(9, 10)}
        v_m = Fraction(1, 2) * ((a["m"] - a["none"]) + (a["all"] - a["o"]))
        v_o = Fraction(1, 2) * ((a["o"] - a["none"]) + (a["all"] - a["m"]))
        assert (float(v_m), float(v_o)) == pytest.approx(shapley_values(ShapleyInputs(0.9, 0.6)), abs=1e-15)

    def test_validation(self):
        with pytest.raises(ConfigError):
            EnumerableTask([((0,), 0, 0.5)], lambda x: 0)
        with pytest.raises(DimensionError):
            expected_accuracy_given([3], EnumerableTask([((0,), 0, 1.0)], lambda x: 0))
