"""Training objectives; each returns a batch-mean scalar on the live graph."""
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .tensor import Tensor, as_tensor, getitem, log, log_softmax, mean, mul, reshape, scale, stack, sub

LOG_FLOOR = 1e-12


@dataclass
class LossValue:
    value: Tensor
    task_name: str = ""
    batch_size: int = 0

    def item(self):
        return self.value.item()


def _finite(loss, task_name, batch_size):
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss for task {task_name!r}")
    return LossValue(loss, task_name, batch_size)


def cross_entropy(pred, target, task_name=""):
    """Mean of ``-log(max(p[target], 1e-12))`` over rows of class distributions."""
    pred = as_tensor(pred)
    if pred.ndim == 1:
        pred = reshape(pred, (1, pred.shape[0]))
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    B, n = pred.shape
    if target.shape != (B,):
        raise InputError(f"{len(target)} targets for {B} predictions")
    if ((target < 0) | (target >= n)).any():
        raise InputError(f"target class outside [0, {n}): {target.tolist()}")
    picked = getitem(pred, (np.arange(B), target))
    loss = mean(-log(picked, floor=LOG_FLOOR))
    return _finite(loss, task_name, B)


def mse(pred, target, task_name=""):
    """Mean of ``(y - score)^2``."""
    pred = as_tensor(pred)
    if pred.ndim == 0:
        pred = reshape(pred, (1,))
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise InputError(f"prediction shape {pred.shape} vs target shape {target.shape}")
    diff = sub(Tensor(target), pred)
    return _finite(mean(mul(diff, diff)), task_name, len(target))


def ranking_probs(scores, gamma=1.0):
    """Softmax of ``gamma * Rel`` over one candidate set, as a numpy array."""
    s = gamma * np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


def ranking_nll(score_sets, positives, gamma=1.0, task_name=""):
    """Mean over queries of ``-log softmax(gamma * Rel)[positive]``.

    ``score_sets`` is one 1-D relevance tensor per query (or a 2-D tensor
    with one row per query); ``positives`` gives each positive's index.
    Passing a single 1-D tensor with an int ``positives`` scores one query.
    """
    if gamma <= 0:
        raise InputError("gamma must be positive")
    if isinstance(score_sets, Tensor) and score_sets.ndim == 1:
        score_sets = [score_sets]
        positives = [positives]
    elif isinstance(score_sets, Tensor):
        score_sets = [score_sets[i] for i in range(score_sets.shape[0])]
    positives = list(np.atleast_1d(positives))
    if len(score_sets) != len(positives) or not score_sets:
        raise InputError("need exactly one positive index per query")
    terms = []
    for scores, pos in zip(score_sets, positives):
        scores = as_tensor(scores)
        if scores.ndim != 1 or scores.shape[0] < 2:
            raise InputError("each query needs at least two candidates")
        if not 0 <= int(pos) < scores.shape[0]:
            raise InputError(f"positive index {pos} outside candidate list of {scores.shape[0]}")
        logp = log_softmax(scale(scores, gamma))
        terms.append(-getitem(logp, int(pos)))
    loss = mean(stack(terms))
    return _finite(loss, task_name, len(terms))


def positive_index(labels):
    """Index of the single positive in a 0/1 candidate labelling."""
    labels = [int(v) for v in labels]
    hits = [i for i, v in enumerate(labels) if v == 1]
    if len(hits) != 1:
        raise InputError(f"expected exactly one positive candidate, found {len(hits)}")
    return hits[0]
