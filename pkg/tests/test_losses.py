import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfuml.errors import InvalidInputError
from rfuml.losses import (LOG_EPS, ccl_loss, per_sample_ccl, per_sample_ccl_grad, robust_total_loss, total_loss,
                          warmup_gamma)


def _bce_oracle(r, y):
    total = 0.0
    for ri, yi in zip(r, y):
        ri = min(max(ri, LOG_EPS), 1 - LOG_EPS)
        total -= yi * math.log(ri) + (1 - yi) * math.log(1 - ri)
    return total


class TestCcl:
    def test_perfect_prediction(self):
        assert ccl_loss([[1.0, 0.0, 0.0]], [[1, 0, 0]]) == pytest.approx(3 * LOG_EPS, rel=1e-3)

    def test_half(self):
        assert ccl_loss([[0.5, 0.5]], [[1, 0]]) == pytest.approx(2 * math.log(2))

    def test_duplicate_batch(self):
        r, y = [[0.7, 0.2, 0.4]], [[1, 0, 0]]
        assert ccl_loss(r * 2, y * 2) == pytest.approx(ccl_loss(r, y))

    def test_empty_and_mismatch(self):
        with pytest.raises(InvalidInputError):
            ccl_loss(np.zeros((0, 2)), np.zeros((0, 2)))
        with pytest.raises(InvalidInputError):
            ccl_loss([[0.5, 0.5]], [[1, 0, 0]])

    @given(arrays(np.float64, 4, elements=st.floats(0, 1)), st.integers(0, 3))
    def test_matches_oracle_and_finite(self, r, k):
        y = np.eye(4)[k]
        value = per_sample_ccl(r, y)[0]
        assert np.isfinite(value) and value >= 0
        assert value == pytest.approx(_bce_oracle(r, y), rel=1e-12)

    def test_gradient_matches_difference(self):
        rng = np.random.default_rng(0)
        r = rng.uniform(0.05, 0.95, size=(3, 4))
        y = np.eye(4)[[0, 2, 3]]
        h = 1e-6
        num = np.zeros_like(r)
        for idx in np.ndindex(r.shape):
            up, down = r.copy(), r.copy()
            up[idx] += h
            down[idx] -= h
            num[idx] = (per_sample_ccl(up, y).sum() - per_sample_ccl(down, y).sum()) / (2 * h)
        np.testing.assert_allclose(per_sample_ccl_grad(r, y), num, rtol=1e-6)

    def test_gradient_zero_under_clamp(self):
        assert np.all(per_sample_ccl_grad([[1.0, 0.0]], [[1, 0]]) == 0.0)


class TestWarmup:
    @pytest.mark.parametrize("t, expected", [(1, 0.1), (10, 1.0), (50, 1.0), (5, 0.5)])
    def test_ramp(self, t, expected):
        assert warmup_gamma(t, 10) == pytest.approx(expected)

    def test_continuous_at_end(self):
        assert warmup_gamma(10, 10) == warmup_gamma(11, 10) == 1.0

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            warmup_gamma(0, 10)
        with pytest.raises(InvalidInputError):
            warmup_gamma(1, 0)


def _batch(seed=0, n=5, k=3, v=2):
    rng = np.random.default_rng(seed)
    y = np.eye(k)[rng.integers(0, k, n)]
    return rng.uniform(size=(n, k)), [rng.uniform(size=(n, k)) for _ in range(v)], y


class TestTotal:
    def test_gamma_zero(self):
        fused, views, y = _batch()
        assert total_loss(fused, views, y, 0.0) == pytest.approx(sum(ccl_loss(r, y) for r in views))

    def test_single_view_fused_equal(self):
        _, views, y = _batch(v=1)
        assert total_loss(views[0], views, y, 1.0) == pytest.approx(2 * ccl_loss(views[0], y))

    def test_weighted_sum(self):
        # per-view losses 0.4 and 0.6, fused 0.8: pick single-class credibilities with those exact losses
        y = [[1.0]]
        r = lambda loss: [[math.exp(-loss)]]
        assert total_loss(r(0.8), [r(0.4), r(0.6)], y, 0.5) == pytest.approx(1.4)


class TestRobust:
    def test_all_ones_is_total(self):
        fused, views, y = _batch()
        d = np.ones((5, 2))
        assert robust_total_loss(fused, views, y, 0.7, d) == pytest.approx(total_loss(fused, views, y, 0.7))

    def test_all_zero(self):
        fused, views, y = _batch()
        assert robust_total_loss(fused, views, y, 0.0, np.zeros((5, 2))) == 0.0

    def test_half_weight_halves(self):
        fused, views, y = _batch(n=1, v=1)
        full = robust_total_loss(fused, views, y, 0.0, [[1.0]])
        assert robust_total_loss(fused, views, y, 0.0, [[0.5]]) == pytest.approx(full / 2)

    def test_rejects_out_of_range(self):
        fused, views, y = _batch()
        with pytest.raises(InvalidInputError):
            robust_total_loss(fused, views, y, 1.0, np.full((5, 2), 1.5))
        with pytest.raises(InvalidInputError):
            robust_total_loss(fused, views, y, 1.0, np.ones((4, 2)))

    @given(st.integers(0, 4), st.integers(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_d(self, i, v, lo, hi):
        lo, hi = min(lo, hi), max(lo, hi)
        fused, views, y = _batch()
        d_lo, d_hi = np.full((5, 2), 0.5), np.full((5, 2), 0.5)
        d_lo[i, v], d_hi[i, v] = lo, hi
        assert robust_total_loss(fused, views, y, 1.0, d_lo) <= robust_total_loss(fused, views, y, 1.0, d_hi) + 1e-12
