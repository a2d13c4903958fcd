"""Evaluation metrics and per-task reports."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .heads import RANKING, REGRESSION


def _pair(pred, gold, min_len=1):
    pred, gold = np.asarray(pred), np.asarray(gold)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise InputError(f"prediction/gold shapes differ: {pred.shape} vs {gold.shape}")
    if len(pred) < min_len:
        raise InputError(f"need at least {min_len} items, got {len(pred)}")
    return pred, gold


def accuracy(pred, gold):
    pred, gold = _pair(pred, gold)
    return float(np.mean(pred == gold))


def _confusion(pred, gold, positive):
    p, g = pred == positive, gold == positive
    return int(np.sum(p & g)), int(np.sum(p & ~g)), int(np.sum(~p & g)), int(np.sum(~p & ~g))


def f1_binary(pred, gold, positive_class=1):
    """``2TP / (2TP + FP + FN)``; 0 when nothing is predicted or gold-positive."""
    pred, gold = _pair(pred, gold)
    tp, fp, fn, _ = _confusion(pred, gold, positive_class)
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def matthews_corr(pred, gold, positive_class=1):
    """Matthews correlation of binary labels; 0 when any marginal is empty."""
    pred, gold = _pair(pred, gold)
    tp, fp, fn, tn = _confusion(pred, gold, positive_class)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def pearson(x, y):
    """Sample correlation; 0 when either input is constant."""
    x, y = _pair(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), min_len=2)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(x):
    """1-based ranks with ties sharing their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    x, y = _pair(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), min_len=2)
    return pearson(average_ranks(x), average_ranks(y))


@dataclass
class EvalReport:
    task_name: str
    metrics: dict = field(default_factory=dict)
    n_examples: int = 0

    def lines(self):
        return [f"{self.task_name}\t{name}\t{value:.17g}" for name, value in self.metrics.items()]


def evaluate(model, task_spec, features):
    """Score a model on featurised examples with the task's declared metrics."""
    preds = model.predict(task_spec.name, features.inputs)
    gold = features.targets
    report = EvalReport(task_spec.name, {}, len(gold))
    if task_spec.task_type == REGRESSION:
        values = {"pearson": lambda: pearson(preds, gold), "spearman": lambda: spearman(preds, gold)}
    elif task_spec.task_type == RANKING:
        top = [int(np.argmax(s)) for s in preds]  # argmax keeps the first of tied scores
        values = {"accuracy": lambda: accuracy(top, gold)}
    else:
        cls = preds.argmax(axis=1)
        gold = np.asarray(gold)
        values = {
            "accuracy": lambda: accuracy(cls, gold),
            "f1": lambda: f1_binary(cls, gold, 1),
            "mcc": lambda: matthews_corr(cls, gold, 1),
        }
    for name in task_spec.metrics:
        report.metrics[name] = values[name]()
    return report
