"""Evaluation metrics: accuracy, F1, Matthews correlation, Pearson, Spearman.

Hand-rolled on purpose -- the test suite checks each against an
independent library reference, so these stay the implementation side of
that pair.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricReport:
    values: dict
    count: int

    def __getitem__(self, name):
        return self.values[name]


def confusion(predictions, labels):
    """Binary confusion counts; class 1 is positive."""
    preds = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(labels, dtype=np.int64)
    if preds.shape != gold.shape:
        raise ValueError("predictions and labels must have equal length")
    return ConfusionCounts(
        tp=int(np.sum((preds == 1) & (gold == 1))),
        tn=int(np.sum((preds == 0) & (gold == 0))),
        fp=int(np.sum((preds == 1) & (gold == 0))),
        fn=int(np.sum((preds == 0) & (gold == 1))),
    )


def accuracy(predictions, labels):
    preds = np.asarray(predictions)
    gold = np.asarray(labels)
    if preds.shape != gold.shape or preds.size == 0:
        raise ValueError("predictions and labels must be nonempty and equal length")
    return float(np.mean(preds == gold))


def f1(c: ConfusionCounts):
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 0.0
    return 2.0 * c.tp / denom


def matthews_corr(c: ConfusionCounts):
    """(tp*tn - fp*fn) / sqrt((tp+fp)(tp+fn)(tn+fp)(tn+fn)); 0 if any factor is 0."""
    factors = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if factors == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(factors)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of >= 2 values")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson is undefined for constant input")
    return float((xc * yc).sum() / (sx * sy))


def _average_ranks(x):
    # ties get the mean of the rank positions they occupy (1-based)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("spearman needs two equal-length sequences of >= 2 values")
    return pearson(_average_ranks(x), _average_ranks(y))


_CLASSIFICATION_METRICS = {"accuracy", "f1", "matthews"}
_REGRESSION_METRICS = {"pearson", "spearman"}


def compute_metrics(metric_names, predictions, labels):
    """Evaluate each named metric on prediction/label vectors.

    Classification metrics expect integer class ids (f1/matthews: binary,
    positive class 1); correlation metrics expect reals.
    """
    values = {}
    for name in metric_names:
        if name == "accuracy":
            values[name] = accuracy(predictions, labels)
        elif name == "f1":
            values[name] = f1(confusion(predictions, labels))
        elif name == "matthews":
            values[name] = matthews_corr(confusion(predictions, labels))
        elif name == "pearson":
            values[name] = pearson(predictions, labels)
        elif name == "spearman":
            values[name] = spearman(predictions, labels)
        else:
            raise ValueError(f"unknown metric {name!r}")
    return MetricReport(values=values, count=len(np.asarray(predictions)))
