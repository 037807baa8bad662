"""Metric implementations against independent references (sklearn, scipy)."""

import numpy as np
import pytest
from scipy.stats import pearsonr, spearmanr
from sklearn.metrics import (
    accuracy_score, confusion_matrix, f1_score, matthews_corrcoef,
)

from sentcl import MetricReport, compute_metrics
from sentcl.metrics import (
    ConfusionCounts, accuracy, confusion, f1, matthews_corr, pearson, spearman,
)


def random_binary(rng, n=200):
    return rng.integers(0, 2, size=n), rng.integers(0, 2, size=n)


class TestConfusion:
    def test_counts_match_sklearn(self, rng):
        preds, gold = random_binary(rng)
        c = confusion(preds, gold)
        tn, fp, fn, tp = confusion_matrix(gold, preds).ravel()
        assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0])


class TestAgainstReferences:
    def test_accuracy(self, rng):
        for _ in range(20):
            preds, gold = random_binary(rng)
            assert accuracy(preds, gold) == pytest.approx(
                accuracy_score(gold, preds), abs=1e-8)

    def test_f1(self, rng):
        for _ in range(20):
            preds, gold = random_binary(rng)
            assert f1(confusion(preds, gold)) == pytest.approx(
                f1_score(gold, preds, zero_division=0.0), abs=1e-8)

    def test_matthews(self, rng):
        for _ in range(20):
            preds, gold = random_binary(rng)
            assert matthews_corr(confusion(preds, gold)) == pytest.approx(
                matthews_corrcoef(gold, preds), abs=1e-8)

    def test_pearson(self, rng):
        for _ in range(20):
            x = rng.standard_normal(100)
            y = 0.5 * x + rng.standard_normal(100)
            assert pearson(x, y) == pytest.approx(pearsonr(x, y)[0], abs=1e-8)

    def test_spearman(self, rng):
        for _ in range(20):
            x = rng.standard_normal(60)
            y = x ** 3 + 0.2 * rng.standard_normal(60)
            assert spearman(x, y) == pytest.approx(spearmanr(x, y)[0], abs=1e-8)

    def test_spearman_with_ties(self):
        x = [1.0, 2.0, 2.0, 3.0, 4.0]
        y = [5.0, 3.0, 3.0, 1.0, 1.0]
        assert spearman(x, y) == pytest.approx(spearmanr(x, y)[0], abs=1e-10)


class TestAnchors:
    def test_matthews_small_table(self):
        # tp=6 tn=3 fp=1 fn=2 worked out by hand: 16/sqrt(7*8*5*4*... )
        value = matthews_corr(ConfusionCounts(tp=6, tn=3, fp=1, fn=2))
        assert value == pytest.approx(0.478091, abs=1e-6)

    def test_pearson_small_vectors(self):
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_matthews_zero_denominator_is_zero(self):
        assert matthews_corr(ConfusionCounts(tp=5, tn=0, fp=5, fn=0)) == 0.0

    def test_f1_no_positives_is_zero(self):
        assert f1(ConfusionCounts(tp=0, tn=10, fp=0, fn=0)) == 0.0

    def test_perfect_prediction(self):
        gold = [0, 1, 1, 0, 1]
        assert accuracy(gold, gold) == 1.0
        assert matthews_corr(confusion(gold, gold)) == pytest.approx(1.0)
        assert f1(confusion(gold, gold)) == pytest.approx(1.0)

    def test_pearson_constant_input_rejected(self):
        with pytest.raises(ValueError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestComputeMetrics:
    def test_dispatch_and_report(self, rng):
        preds, gold = random_binary(rng)
        report = compute_metrics(("accuracy", "f1", "matthews"), preds, gold)
        assert isinstance(report, MetricReport)
        assert report.count == len(preds)
        assert set(report.values) == {"accuracy", "f1", "matthews"}

    def test_regression_metrics(self, rng):
        x = rng.standard_normal(50)
        y = x + 0.1 * rng.standard_normal(50)
        report = compute_metrics(("pearson", "spearman"), x, y)
        assert report.values["pearson"] > 0.9

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="unknown metric"):
            compute_metrics(("bleu",), [0], [0])
