"""Task-specific output modules.

Heads are batch-native: vectors are ``(d,)`` or ``(B, d)`` and SAN memories
``(m, d)`` or ``(B, m, d)``. Head dropout is applied by the caller to the
head inputs; the only noise inside a head is SAN's prediction dropout.
"""
from dataclasses import dataclass, field

import numpy as np

from .encoder import encode, init_tensor, pack
from .errors import ConfigError, DimensionError, InputError
from .tensor import (
    Tensor,
    abs_,
    add_bias,
    concat,
    getitem,
    matmul,
    mul,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    swap_last,
    tanh,
)

SINGLE = "single"
PAIR = "pair"
REGRESSION = "regression"
RANKING = "ranking"
TASK_TYPES = (SINGLE, PAIR, REGRESSION, RANKING)


def _as_batch(x):
    """Promote ``(d,)`` to ``(1, d)``; returns the tensor and whether it was promoted."""
    if x.ndim == 1:
        return reshape(x, (1, x.shape[0])), True
    return x, False


def _column(w):
    return reshape(w, (w.shape[0], 1))


@dataclass
class Classification:
    W: Tensor  # d x n_labels

    @staticmethod
    def shapes(d, n_labels):
        return [("W", (d, n_labels))]

    def named(self):
        return [("W", self.W)]


@dataclass
class Similarity:
    w: Tensor  # d

    @staticmethod
    def shapes(d, n_labels=None):
        return [("w", (d,))]

    def named(self):
        return [("w", self.w)]


@dataclass
class Ranking:
    w: Tensor  # d

    @staticmethod
    def shapes(d, n_labels=None):
        return [("w", (d,))]

    def named(self):
        return [("w", self.w)]


@dataclass
class GRUCell:
    """Update/reset-gate GRU with input and state size ``d``; gate order r, z, n."""

    W_i: Tensor  # d x 3d
    W_h: Tensor  # d x 3d
    b_i: Tensor  # 3d
    b_h: Tensor  # 3d

    @staticmethod
    def shapes(d):
        return [("W_i", (d, 3 * d)), ("W_h", (d, 3 * d)), ("b_i", (3 * d,)), ("b_h", (3 * d,))]

    def named(self):
        return [("W_i", self.W_i), ("W_h", self.W_h), ("b_i", self.b_i), ("b_h", self.b_h)]

    def __call__(self, h, x):
        d = h.shape[-1]
        gi = add_bias(matmul(x, self.W_i), self.b_i)
        gh = add_bias(matmul(h, self.W_h), self.b_h)
        r = sigmoid(getitem(gi, (..., slice(0, d))) + getitem(gh, (..., slice(0, d))))
        z = sigmoid(getitem(gi, (..., slice(d, 2 * d))) + getitem(gh, (..., slice(d, 2 * d))))
        n = tanh(getitem(gi, (..., slice(2 * d, 3 * d))) + mul(r, getitem(gh, (..., slice(2 * d, 3 * d)))))
        return n - mul(z, n) + mul(z, h)


@dataclass
class SanPairwise:
    w_1: Tensor  # d
    W_2: Tensor  # d x d
    gru: GRUCell
    W_3: Tensor  # 4d x n_labels
    K: int = 5
    pred_dropout: float = 0.1

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("SAN needs K >= 1 reasoning steps")
        if not 0.0 <= self.pred_dropout < 1.0:
            raise ConfigError("prediction dropout must be in [0, 1)")

    @staticmethod
    def shapes(d, n_labels):
        return (
            [("w_1", (d,)), ("W_2", (d, d))]
            + [("gru." + n, s) for n, s in GRUCell.shapes(d)]
            + [("W_3", (4 * d, n_labels))]
        )

    def named(self):
        return (
            [("w_1", self.w_1), ("W_2", self.W_2)]
            + [("gru." + n, t) for n, t in self.gru.named()]
            + [("W_3", self.W_3)]
        )


HEAD_CLASSES = {SINGLE: Classification, PAIR: SanPairwise, REGRESSION: Similarity, RANKING: Ranking}


def head_shapes(task_type, d, n_labels):
    return HEAD_CLASSES[task_type].shapes(d, n_labels)


def build_head(task_type, tensors, K=5, pred_dropout=0.1):
    """Assemble a head from a ``local name -> Tensor`` mapping."""
    if task_type == SINGLE:
        return Classification(tensors["W"])
    if task_type == REGRESSION:
        return Similarity(tensors["w"])
    if task_type == RANKING:
        return Ranking(tensors["w"])
    if task_type == PAIR:
        gru = GRUCell(*(tensors["gru." + n] for n in ("W_i", "W_h", "b_i", "b_h")))
        return SanPairwise(tensors["w_1"], tensors["W_2"], gru, tensors["W_3"], K, pred_dropout)
    raise ConfigError(f"unknown task type {task_type!r}")


def init_head(task_type, d, n_labels, rng, K=5, pred_dropout=0.1):
    tensors = {name: init_tensor(name, shape, rng) for name, shape in head_shapes(task_type, d, n_labels)}
    for name in ("gru.b_i", "gru.b_h"):
        if name in tensors:
            tensors[name] = Tensor(np.zeros(tensors[name].shape), requires_grad=True)
    return build_head(task_type, tensors, K, pred_dropout)


# -- forward passes ------------------------------------------------------
def classify_single(x, head):
    """Class distribution ``softmax(W^T x)``."""
    xb, single = _as_batch(x)
    if xb.shape[-1] != head.W.shape[0]:
        raise DimensionError(f"input width {xb.shape[-1]} vs W {head.W.shape}")
    probs = softmax(matmul(xb, head.W), axis=-1)
    return reshape(probs, (head.W.shape[1],)) if single else probs


def _linear_score(x, w):
    xb, single = _as_batch(x)
    if xb.shape[-1] != w.shape[0]:
        raise DimensionError(f"input width {xb.shape[-1]} vs weight {w.shape}")
    score = reshape(matmul(xb, _column(w)), (xb.shape[0],))
    return reshape(score, ()) if single else score


def similarity(x, head):
    """Unbounded similarity score ``w^T x``."""
    return _linear_score(x, head.w)


def relevance(x, head):
    """Relevance ``sigmoid(w^T x)``, strictly inside (0, 1)."""
    return sigmoid(_linear_score(x, head.w))


@dataclass
class SanTrace:
    alpha: np.ndarray
    betas: list = field(default_factory=list)
    xs: list = field(default_factory=list)
    states: list = field(default_factory=list)
    step_probs: list = field(default_factory=list)
    kept_mask: np.ndarray = None


def _step_weights(batch, K, pred_dropout, training, rng):
    """Averaging weights over steps; dropped steps get weight 0."""
    if not training or pred_dropout == 0.0:
        return np.full((batch, K), 1.0 / K), None
    if rng is None:
        raise ConfigError("prediction dropout in training mode needs an rng")
    kept = rng.random((batch, K)) >= pred_dropout
    kept[~kept.any(axis=1)] = True  # every step dropped: keep them all
    return kept / kept.sum(axis=1, keepdims=True), kept


def san_forward(M_p, M_h, head, training=False, rng=None):
    """K-step SAN answer module over premise/hypothesis memories.

    Returns the averaged relation distribution and a :class:`SanTrace`.
    """
    if M_p.shape[-2] < 1 or M_h.shape[-2] < 1:
        raise InputError("SAN memories must hold at least one row")
    single = M_p.ndim == 2
    if single:
        M_p = reshape(M_p, (1,) + M_p.shape)
        M_h = reshape(M_h, (1,) + M_h.shape)
    B, n, d = M_h.shape
    if M_p.shape[0] != B or M_p.shape[-1] != d or head.w_1.shape[0] != d:
        raise DimensionError(f"SAN memory shapes {M_p.shape} / {M_h.shape} do not fit d={head.w_1.shape[0]}")

    alpha = softmax(reshape(matmul(M_h, _column(head.w_1)), (B, 1, n)), axis=-1)
    s = matmul(alpha, M_h)  # B x 1 x d
    trace = SanTrace(alpha=alpha.data.reshape(B, n))
    M_p_T = swap_last(M_p)
    W_2_T = swap_last(head.W_2)

    step_probs = []
    for k in range(head.K):
        beta = softmax(matmul(matmul(s, W_2_T), M_p_T), axis=-1)  # B x 1 x m
        x = matmul(beta, M_p)
        if k > 0:
            s = head.gru(s, x)
        features = concat([s, x, abs_(s - x), mul(s, x)], axis=-1)
        probs = softmax(matmul(features, head.W_3), axis=-1)  # B x 1 x n_labels
        step_probs.append(probs)
        trace.betas.append(beta.data.reshape(B, -1))
        trace.xs.append(x.data.reshape(B, d))
        trace.states.append(s.data.reshape(B, d))
        trace.step_probs.append(probs.data.reshape(B, -1))

    weights, kept = _step_weights(B, head.K, head.pred_dropout, training, rng)
    trace.kept_mask = kept
    stacked = concat(step_probs, axis=-2)  # B x K x n_labels
    avg = matmul(Tensor(weights.reshape(B, 1, head.K)), stacked)
    n_labels = head.W_3.shape[1]
    if single:
        trace.alpha = trace.alpha[0]
        for seq in (trace.betas, trace.xs, trace.states, trace.step_probs):
            seq[:] = [a[0] for a in seq]
        if kept is not None:
            trace.kept_mask = kept[0]
        return reshape(avg, (n_labels,)), trace
    return reshape(avg, (B, n_labels)), trace


def rank_order(scores):
    """Indices by descending score; ties keep the original order."""
    scores = [float(s) for s in scores]
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def rank_candidates(query_ids, candidates, encoder_params, head, *, cls_id, sep_id, max_len=512):
    """Score each ``(query, candidate)`` pair and order candidates by relevance.

    Returns ``[(candidate index, score), ...]`` best first.
    """
    if not candidates:
        raise InputError("no candidates to rank")
    scores = []
    with no_grad():
        for cand in candidates:
            packed = pack(query_ids, cand, max_len, cls_id=cls_id, sep_id=sep_id)
            C = encode(packed, encoder_params)
            scores.append(relevance(C[0], head).item())
    return [(i, scores[i]) for i in rank_order(scores)]
