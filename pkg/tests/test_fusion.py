import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfuml.errors import InvalidInputError
from rfuml.fusion import (FusedOpinion, ViewOpinion, fuse, fuse_batch, opinions_from_memberships, rmf_weights,
                          training_weights)


def op(u, o, v, m=(0.5, 0.5)):
    return ViewOpinion(np.asarray(m, dtype=float), u, o, v)


E = math.e


class TestRmfWeights:
    def test_symmetric(self):
        np.testing.assert_allclose(rmf_weights([op(0.3, 0.2, v) for v in range(3)]), [1 / 3] * 3)

    def test_best_vs_worst(self):
        np.testing.assert_allclose(rmf_weights([op(0, 0, 0), op(1, 1, 1)]), [E / (E + 1), 1 / (E + 1)])

    def test_equal_scores(self):
        np.testing.assert_allclose(rmf_weights([op(0.5, 0.5, 0), op(0.5, 0.5, 1)]), [0.5, 0.5])

    def test_identity_g(self):
        w = rmf_weights([op(0.0, 0.0, 0), op(0.5, 0.0, 1)], g="identity")
        np.testing.assert_allclose(w, [2 / 3, 1 / 3])
        np.testing.assert_allclose(rmf_weights([op(1, 0, 0), op(1, 0, 1)], g="identity"), [0.5, 0.5])

    def test_rejects_single_view_and_duplicates(self):
        with pytest.raises(InvalidInputError):
            rmf_weights([op(0, 0, 0)])
        with pytest.raises(InvalidInputError):
            rmf_weights([op(0, 0, 0), op(0, 0, 0)])

    def test_unknown_g(self):
        with pytest.raises(InvalidInputError):
            rmf_weights([op(0, 0, 0), op(0, 0, 1)], g="square")


class TestTrainingWeights:
    def test_equal(self):
        np.testing.assert_allclose(training_weights([op(0.9, 0.2, v) for v in range(3)]), [1 / 3] * 3)

    def test_extremes(self):
        np.testing.assert_allclose(training_weights([op(0.7, 0, 0), op(0.1, 1, 1)]), [E / (E + 1), 1 / (E + 1)])

    def test_four_views(self):
        np.testing.assert_allclose(training_weights([op(0, 0.5, v) for v in range(4)]), [0.25] * 4)

    def test_ignores_uncertainty(self):
        a = training_weights([op(0.0, 0.3, 0), op(1.0, 0.6, 1)])
        b = training_weights([op(1.0, 0.3, 0), op(0.0, 0.6, 1)])
        np.testing.assert_allclose(a, b)


class TestFuse:
    def test_degenerate_weight(self):
        ops = [op(0, 0, 0, [0.9, 0.1]), op(0, 0, 1, [0.2, 0.7])]
        out = fuse(ops, [1.0, 0.0])
        assert isinstance(out, FusedOpinion)
        np.testing.assert_allclose(out.membership, [0.9, 0.1])

    def test_opposed_views(self):
        out = fuse([op(0, 0, 0, [1, 0]), op(0, 0, 1, [0, 1])], [0.5, 0.5])
        np.testing.assert_allclose(out.membership, [0.5, 0.5])
        assert out.uncertainty == pytest.approx(1.0)

    def test_convex_combination(self):
        out = fuse([op(0, 0, 0, [0.8, 0.2]), op(0, 0, 1, [0.4, 0.6])], [0.75, 0.25])
        np.testing.assert_allclose(out.membership, [0.7, 0.3])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            fuse([op(0, 0, 0), op(0, 0, 1)], [1.0])

    def test_opinions_from_memberships(self):
        ops = opinions_from_memberships([[0.6, 0.8], [0.8, 0.6], [0.6, 0.8]])
        assert [o.view_index for o in ops] == [0, 1, 2]
        assert ops[0].conflict == pytest.approx(0.02)

    def test_batch_matches_per_instance(self):
        rng = np.random.default_rng(1)
        ms = rng.uniform(size=(3, 5, 4))
        fused, w, u = fuse_batch(ms, "rmf")
        for i in range(5):
            ops = opinions_from_memberships(ms[:, i])
            wi = rmf_weights(ops)
            np.testing.assert_allclose(w[:, i], wi)
            out = fuse(ops, wi)
            np.testing.assert_allclose(fused[i], out.membership)
            assert u[i] == pytest.approx(out.uncertainty)
        fused_t, w_t, _ = fuse_batch(ms, "training")
        np.testing.assert_allclose(w_t[:, 0], training_weights(opinions_from_memberships(ms[:, 0])))
        _, w_a, _ = fuse_batch(ms, "average")
        np.testing.assert_allclose(w_a, 1 / 3)


unit = st.floats(0, 1)


@given(st.lists(st.tuples(unit, unit), min_size=2, max_size=6), st.sampled_from(["exp", "identity"]))
def test_simplex(pairs, g):
    ops = [op(u, o, v) for v, (u, o) in enumerate(pairs)]
    for w in (rmf_weights(ops, g), training_weights(ops, g)):
        assert np.all(w >= 0)
        assert abs(w.sum() - 1) < 1e-9
