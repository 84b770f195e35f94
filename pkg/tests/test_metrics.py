import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfuml.data import ConflictLabels
from rfuml.errors import InvalidInputError
from rfuml.gmm import DivisionResult
from rfuml.metrics import (accuracy, division_rates, evaluation_report, fpr95, predict, uncertainty_density,
                           write_density_csv)


def fpr95_oracle(scores, positive):
    """Exhaustive sweep: lowest clean false-positive rate over every threshold with TPR >= 0.95."""
    best = 1.0
    for tau in np.unique(scores):
        detected = scores >= tau
        if detected[positive].mean() >= 0.95:
            best = min(best, detected[~positive].mean())
    return best


class TestAccuracy:
    @pytest.mark.parametrize("pred, expected", [([0, 1, 2, 1], 1.0), ([1, 2, 0, 0], 0.0), ([0, 1, 2, 0], 0.75)])
    def test_examples(self, pred, expected):
        assert accuracy(pred, [0, 1, 2, 1]) == expected

    def test_tie_lowest_index(self):
        assert predict([[0.4, 0.4, 0.2]])[0] == 0

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            accuracy([], [])

    @given(st.permutations(range(8)))
    def test_permutation_invariant(self, perm):
        p, y = np.array([0, 1, 1, 2, 0, 0, 1, 2]), np.array([0, 1, 0, 2, 1, 0, 1, 1])
        assert accuracy(p[list(perm)], y[list(perm)]) == accuracy(p, y)


class TestFpr95:
    def test_perfect(self):
        assert fpr95([0.9, 0.8, 0.1, 0.2], [True, True, False, False]) == 0.0

    def test_identical(self):
        assert fpr95(np.full(6, 0.4), [True, False] * 3) == 1.0

    def test_hand_placed(self):
        scores = np.array([0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5,
                           0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05, 0.0])
        positive = np.array([1, 1, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0], dtype=bool)
        # the lowest positive (0.2) must be admitted to reach 9/9, which also admits 7 of 11 clean scores
        assert fpr95(scores, positive) == pytest.approx(fpr95_oracle(scores, positive))
        assert fpr95(scores, positive) == pytest.approx(7 / 11)

    @settings(max_examples=300)
    @given(st.lists(st.tuples(st.integers(0, 12), st.booleans()), min_size=2, max_size=60)
           .filter(lambda r: any(p for _, p in r) and not all(p for _, p in r)))
    def test_matches_oracle(self, rows):
        scores = np.array([s / 12 for s, _ in rows])
        positive = np.array([p for _, p in rows])
        assert fpr95(scores, positive) == pytest.approx(fpr95_oracle(scores, positive))

    @given(st.lists(st.integers(0, 40), min_size=6, max_size=40))
    def test_monotone_transform_invariant(self, values):
        scores = np.array(values) / 40
        positive = np.array([i % 2 == 0 for i in range(len(values))])
        assert fpr95(np.exp(3 * scores) + 7, positive) == fpr95(scores, positive)

    def test_missing_class(self):
        with pytest.raises(InvalidInputError):
            fpr95([0.1, 0.2], [True, True])


def division(judged_conflicting):
    j = np.asarray(judged_conflicting, dtype=bool)
    return DivisionResult(np.zeros(j.shape), np.where(j, 0.2, 0.9), ~j, np.where(j, 0.2, 1.0))


def truth(conflicted):
    c = np.asarray(conflicted, dtype=bool)
    return ConflictLabels(c.astype(np.int8), np.zeros(c.shape, dtype=np.int64))


class TestDivisionRates:
    def test_perfect(self):
        t = np.random.default_rng(0).random((20, 2)) < 0.4
        pooled = division_rates(division(t), truth(t))["pooled"]
        assert (pooled.fpr, pooled.fnr, pooled.average) == (0.0, 0.0, 0.0)

    def test_all_clean(self):
        t = np.zeros((10, 1), dtype=bool)
        t[:4] = True
        pooled = division_rates(division(np.zeros((10, 1))), truth(t))["pooled"]
        assert (pooled.fnr, pooled.fpr, pooled.average) == (1.0, 0.0, 0.5)

    def test_confusion_arithmetic(self):
        # TP=3, FN=1, FP=2, TN=4
        actual = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
        judged = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0]
        view = division_rates(division(np.array(judged)[:, None]), truth(np.array(actual)[:, None]))["per_view"][0]
        assert view.counts == {"tp": 3, "fn": 1, "fp": 2, "tn": 4}
        assert view.fnr == pytest.approx(0.25) and view.fpr == pytest.approx(1 / 3)
        assert sum(view.counts.values()) == 10

    def test_undefined_rate_warns_and_is_excluded(self):
        actual = np.array([[1, 0], [0, 0], [1, 0], [0, 0]], dtype=bool)
        judged = np.array([[1, 1], [0, 0], [0, 0], [0, 0]], dtype=bool)
        with pytest.warns(UserWarning, match="view 1"):
            rates = division_rates(division(judged), truth(actual))
        assert np.isnan(rates["per_view"][1].fnr)
        assert rates["pooled"].fnr == pytest.approx(0.5)

    def test_grid_mismatch(self):
        with pytest.raises(InvalidInputError):
            division_rates(division(np.zeros((3, 2))), truth(np.zeros((3, 3))))


class TestDensity:
    def test_single_bin(self):
        table = uncertainty_density(np.full(8, 0.5), [True, False] * 4, bins=10)
        assert np.count_nonzero(table["clean"]) == 1 and np.count_nonzero(table["conflicting"]) == 1

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=50), st.integers(2, 30))
    def test_counts_sum(self, rows, bins):
        u = np.array([r[0] for r in rows])
        c = np.array([r[1] for r in rows])
        table = uncertainty_density(u, c, bins)
        assert table["clean"].sum() == (~c).sum() and table["conflicting"].sum() == c.sum()

    def test_empty_group_csv(self, tmp_path):
        write_density_csv(tmp_path / "d.csv", uncertainty_density([0.1, 0.7], [False, False], 4))
        rows = list(csv.reader(open(tmp_path / "d.csv")))
        assert rows[0] == ["bin_left", "bin_right", "clean_count", "conflicting_count"]
        assert len(rows) == 5 and all(r[3] == "" for r in rows[1:])
        assert rows[1][:2] == ["0", "0.25"]

    def test_bins_validated(self):
        with pytest.raises(InvalidInputError):
            uncertainty_density([0.1], [True], bins=1)


def test_evaluation_report_ranges():
    rng = np.random.default_rng(0)
    fused = rng.uniform(size=(30, 3))
    u = rng.uniform(size=30)
    c = rng.random(30) < 0.3
    report = evaluation_report(fused, u, rng.integers(0, 3, 30), c, bins=5)
    d = report.to_dict()
    assert 0 <= d["accuracy"] <= 1 and 0 <= d["fpr95"] <= 1
    assert d["n_conflicting"] == int(c.sum())
    assert sum(d["density"]["clean"]) + sum(d["density"]["conflicting"]) == 30
