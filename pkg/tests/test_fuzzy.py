import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfuml import fuzzy
from rfuml.errors import DegenerateInputError, InvalidInputError


def _entropy_oracle(c):
    total = 0.0
    for x in c:
        for p in (x, 1 - x):
            if p > 0:
                total -= p * math.log(p)
    return total / (len(c) * math.log(2))


memberships = st.integers(2, 7).flatmap(
    lambda k: arrays(np.float64, k, elements=st.floats(0, 1, allow_nan=False)))


class TestMembershipLayer:
    def test_three_four_five(self):
        np.testing.assert_allclose(fuzzy.membership_from_logits([3.0, 4.0]), [0.6, 0.8])

    def test_negative_clamped(self):
        np.testing.assert_allclose(fuzzy.membership_from_logits([-1.0, 1.0]), [0.0, 0.70710678], atol=1e-8)

    def test_zero_logits_uniform(self):
        np.testing.assert_allclose(fuzzy.membership_from_logits([0.0, 0.0, 0.0]), [1 / 3] * 3)

    def test_batch_rows_independent(self):
        a = np.array([[3.0, 4.0], [0.0, 0.0], [-1.0, 1.0]])
        out = fuzzy.membership_from_logits(a)
        for row, expected in zip(a, out):
            np.testing.assert_allclose(fuzzy.membership_from_logits(row), expected)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            fuzzy.membership_from_logits([np.nan, 1.0])
        with pytest.raises(InvalidInputError):
            fuzzy.membership_from_logits([np.inf, 1.0])

    def test_single_class_rejected(self):
        with pytest.raises(InvalidInputError):
            fuzzy.membership_from_logits([1.0])

    @given(arrays(np.float64, 4, elements=st.floats(-50, 50)), st.floats(1e-3, 1e3), st.sampled_from([1.0, 2.0, 3.0]))
    def test_scale_invariance(self, a, lam, p):
        np.testing.assert_allclose(fuzzy.membership_from_logits(lam * a, p), fuzzy.membership_from_logits(a, p),
                                   atol=1e-12)

    @given(arrays(np.float64, 5, elements=st.floats(-1e6, 1e6)))
    def test_range(self, a):
        m = fuzzy.membership_from_logits(a)
        assert np.all((m >= 0) & (m <= 1))


class TestNecessityCredibility:
    def test_worked_example(self):
        np.testing.assert_allclose(fuzzy.necessity([0.8, 0.1, 0.1]), [0.9, 0.2, 0.2])
        np.testing.assert_allclose(fuzzy.credibility([0.8, 0.1, 0.1]), [0.85, 0.15, 0.15])

    @pytest.mark.parametrize("m, e, c", [([1, 0], [1, 0], [1, 0]), ([0.5, 0.5], [0.5, 0.5], [0.5, 0.5])])
    def test_edge_cases(self, m, e, c):
        np.testing.assert_allclose(fuzzy.necessity(m), e)
        np.testing.assert_allclose(fuzzy.credibility(m), c)

    def test_needs_two_classes(self):
        with pytest.raises(InvalidInputError):
            fuzzy.necessity([0.3])

    def test_tolerance_clamp(self):
        np.testing.assert_allclose(fuzzy.credibility([1 + 5e-10, -5e-10]), [1, 0])
        with pytest.raises(InvalidInputError):
            fuzzy.credibility([1.01, 0.0])

    @given(memberships)
    def test_matches_loop_oracle(self, m):
        k = len(m)
        expected = [(m[i] + 1 - max(m[j] for j in range(k) if j != i)) / 2 for i in range(k)]
        np.testing.assert_allclose(fuzzy.credibility(m), expected, atol=1e-15)

    @given(memberships, st.randoms())
    def test_permutation_equivariance(self, m, rnd):
        perm = list(range(len(m)))
        rnd.shuffle(perm)
        np.testing.assert_allclose(fuzzy.credibility(m[perm]), fuzzy.credibility(m)[perm])
        assert fuzzy.uncertainty(fuzzy.credibility(m[perm])) == pytest.approx(fuzzy.uncertainty(fuzzy.credibility(m)))

    @given(memberships)
    def test_range_closure(self, m):
        c = fuzzy.credibility(m)
        assert np.all((c >= 0) & (c <= 1))
        assert 0 <= fuzzy.uncertainty(c) <= 1


class TestUncertainty:
    def test_worked_example(self):
        assert fuzzy.uncertainty([0.85, 0.15, 0.15]) == pytest.approx(0.61, abs=0.005)
        assert fuzzy.uncertainty([0.80, 0.10, 0.10]) == pytest.approx(0.55, abs=0.005)
        assert fuzzy.uncertainty(fuzzy.credibility([0.8, 0.1, 0.1])) > fuzzy.uncertainty([0.8, 0.1, 0.1])

    def test_extremes(self):
        assert fuzzy.uncertainty([1.0, 0.0, 0.0]) == 0.0
        assert fuzzy.uncertainty([0.5, 0.5]) == pytest.approx(1.0)

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            fuzzy.uncertainty([0.5, 1.2])

    @given(arrays(np.float64, st.integers(1, 6), elements=st.floats(0, 1)))
    def test_matches_entropy_oracle(self, c):
        assert fuzzy.uncertainty(c) == pytest.approx(_entropy_oracle(c), abs=1e-12)

    @given(st.floats(0, 1))
    def test_binary_peak_at_half(self, x):
        assert fuzzy.uncertainty([x, 1 - x]) <= fuzzy.uncertainty([0.5, 0.5]) + 1e-12

    def test_batch(self):
        u = fuzzy.uncertainty(np.array([[0.85, 0.15, 0.15], [1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(u, [fuzzy.uncertainty([0.85, 0.15, 0.15]), 0.0])


class TestConflict:
    def test_identical(self):
        assert fuzzy.conflict([1, 0], [[1, 0]]) == pytest.approx(0.0)

    def test_orthogonal(self):
        assert fuzzy.conflict([1, 0], [[0, 1]]) == pytest.approx(1.0)

    def test_three_views(self):
        assert fuzzy.conflict([0.6, 0.8], [[0.8, 0.6], [0.6, 0.8]]) == pytest.approx(0.02)

    def test_zero_vector(self):
        with pytest.raises(DegenerateInputError):
            fuzzy.conflict([0, 0], [[1, 0]])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            fuzzy.conflict([0.5, 0.5], [[0.5, 0.5, 0.1]])

    @given(memberships.filter(lambda m: m.sum() > 1e-3), st.data())
    def test_two_view_symmetry(self, m1, data):
        m2 = data.draw(arrays(np.float64, len(m1), elements=st.floats(0, 1)).filter(lambda x: x.sum() > 1e-3))
        assert fuzzy.conflict(m1, [m2]) == pytest.approx(fuzzy.conflict(m2, [m1]), abs=1e-12)
        assert 0 <= fuzzy.conflict(m1, [m2]) <= 1

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(3)
        ms = rng.uniform(size=(4, 6, 3))
        o = fuzzy.view_conflicts(ms)
        for v in range(4):
            for i in range(6):
                others = [ms[j, i] for j in range(4) if j != v]
                assert o[v, i] == pytest.approx(fuzzy.conflict(ms[v, i], others))

    def test_lenient_zero_vector(self):
        ms = np.array([[[0.0, 0.0]], [[1.0, 0.0]], [[1.0, 0.0]]])
        o = fuzzy.view_conflicts(ms, strict=False)
        np.testing.assert_allclose(o[:, 0], [1.0, 0.5, 0.5])


class TestTrainingCredibility:
    def test_true_class_holds_max(self):
        np.testing.assert_allclose(fuzzy.training_credibility([0.8, 0.1, 0.1], [1, 0, 0]), [0.85, 0.15, 0.15])

    def test_wrong_class_holds_max(self):
        np.testing.assert_allclose(fuzzy.training_credibility([0.1, 0.8, 0.1], [1, 0, 0]), [0.15, 0.85, 0.5])

    def test_perfect_fit(self):
        np.testing.assert_allclose(fuzzy.training_credibility([1, 0], [1, 0]), [1, 0])

    def test_rejects_multi_hot(self):
        with pytest.raises(InvalidInputError):
            fuzzy.training_credibility([0.5, 0.5], [1, 1])

    @given(memberships, st.data())
    def test_true_coordinate_agrees_with_credibility(self, m, data):
        k = data.draw(st.integers(0, len(m) - 1))
        y = np.eye(len(m))[k]
        assert fuzzy.training_credibility(m, y)[k] == pytest.approx(fuzzy.credibility(m)[k])

    @given(memberships, st.data())
    def test_permutation_equivariance(self, m, data):
        k = data.draw(st.integers(0, len(m) - 1))
        perm = np.array(data.draw(st.permutations(range(len(m)))))
        y = np.eye(len(m))[k]
        np.testing.assert_allclose(fuzzy.training_credibility(m[perm], y[perm]),
                                   fuzzy.training_credibility(m, y)[perm])
