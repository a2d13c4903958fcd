"""The finite-difference suite behind ``mtdnn gradcheck``.

Every differentiable building block is checked on small random inputs with
dropout disabled. Components are independent; each returns its report.
"""
import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, EncoderParams, lexicon_encode, pack, transformer_encode
from .gradcheck import grad_check
from .heads import (
    PAIR,
    RANKING,
    REGRESSION,
    SINGLE,
    classify_single,
    init_head,
    relevance,
    san_forward,
    similarity,
)
from .objectives import cross_entropy, mse, ranking_nll
from .rng import stream

H = 1e-5


def _leaf(rng, *shape, scale=1.0):
    return T.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _weights(rng, shape):
    return rng.normal(size=shape)


def _weighted_sum(out, w):
    return T.sum_(T.mul(out, T.Tensor(w)))


def _component(name, f, params, tol, rng, max_coords=None):
    return name, grad_check(f, params, h=H, tol=tol, max_coords=max_coords, rng=rng)


def suite(tol=1e-4, seed=0, san_steps=5):
    """Yield ``(component name, GradCheckReport)`` for every component."""
    rng = stream(seed, "check")

    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    w = _weights(rng, (3, 4))
    yield _component(
        "op.elementwise",
        lambda: _weighted_sum(T.abs_(T.sub(T.mul(a, b), T.scale(a, 0.7))) + T.add(a, b), w),
        [a, b], tol, rng)

    m1, m2 = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    w = _weights(rng, (3, 2))
    yield _component("op.matmul", lambda: _weighted_sum(T.matmul(m1, m2), w), [m1, m2], tol, rng)

    bm1, bm2 = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 3)
    w = _weights(rng, (2, 3, 3))
    yield _component("op.batched_matmul", lambda: _weighted_sum(T.matmul(bm1, bm2), w), [bm1, bm2], tol, rng)

    s = _leaf(rng, 3, 5)
    w = _weights(rng, (3, 5))
    yield _component("op.softmax", lambda: _weighted_sum(T.softmax(s, axis=-1), w), [s], tol, rng)
    yield _component("op.softmax_axis0", lambda: _weighted_sum(T.softmax(s, axis=0), w), [s], tol, rng)
    yield _component("op.log_softmax", lambda: _weighted_sum(T.log_softmax(s), w), [s], tol, rng)

    x, g, bb = _leaf(rng, 4, 6), _leaf(rng, 6), _leaf(rng, 6)
    w = _weights(rng, (4, 6))
    yield _component("op.layer_norm", lambda: _weighted_sum(T.layer_norm(x, g, bb, 1e-5), w), [x, g, bb], tol, rng)

    table = _leaf(rng, 5, 3)
    ids = np.array([[0, 2, 2], [4, 1, 2]])
    w = _weights(rng, (2, 3, 3))
    yield _component("op.embedding", lambda: _weighted_sum(T.embedding(table, ids), w), [table], tol, rng)

    u = _leaf(rng, 3, 4)
    w = _weights(rng, (3, 4))
    yield _component(
        "op.activations",
        lambda: _weighted_sum(T.gelu(u) + T.tanh(u) + T.sigmoid(u) + T.exp(T.scale(u, 0.3)), w),
        [u], tol, rng)

    pos = T.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    yield _component("op.log", lambda: _weighted_sum(T.log(pos), w), [pos], tol, rng)

    v = _leaf(rng, 2, 3, 4)
    w = _weights(rng, (3, 5))
    yield _component(
        "op.shape",
        lambda: _weighted_sum(
            T.concat([T.reshape(T.transpose(v, (1, 0, 2)), (3, 8))[:, 1:4], T.swap_last(v)[1][:3, :2]], axis=-1), w),
        [v], tol, rng)

    # shared encoder: d=8, 2 layers, 2 heads
    cfg = EncoderConfig(vocab_size=20, d=8, n_layers=2, n_heads=2, max_len=16, hidden_dropout=0.0, ln_eps=1e-5)
    enc = EncoderParams.init(cfg, rng)
    for _, t in enc.named():  # larger than init scale so every path carries signal
        t.data += rng.normal(0.0, 0.5 if t.ndim == 2 else 0.1, size=t.shape)
    packed = pack([5, 6, 7], [8, 9], max_len=16, cls_id=2, sep_id=3)
    w = _weights(rng, (len(packed), 8))
    enc_params = [t for _, t in enc.named()]
    yield _component(
        "encoder",
        lambda: _weighted_sum(
            transformer_encode(lexicon_encode(packed.token_ids, packed.segment_ids, enc), enc), w),
        enc_params, tol, rng, max_coords=24)

    d = 8
    x_cls = _leaf(rng, 3, d)
    head = init_head(SINGLE, d, 3, rng)
    head.W.data[...] = rng.normal(size=head.W.shape)
    targets = [0, 2, 1]
    yield _component("head.classification", lambda: cross_entropy(classify_single(x_cls, head), targets).value,
                     [x_cls, head.W], tol, rng)

    head = init_head(REGRESSION, d, 1, rng)
    head.w.data[...] = rng.normal(size=d)
    y = rng.normal(size=3)
    yield _component("head.similarity", lambda: mse(similarity(x_cls, head), y).value, [x_cls, head.w], tol, rng)

    head = init_head(RANKING, d, 1, rng)
    head.w.data[...] = rng.normal(size=d)
    w3 = _weights(rng, (3,))
    yield _component("head.relevance", lambda: _weighted_sum(relevance(x_cls, head), w3), [x_cls, head.w], tol, rng)

    san = init_head(PAIR, d, 3, rng, K=san_steps, pred_dropout=0.0)
    for _, t in san.named():
        t.data[...] = rng.normal(0.0, 0.5, size=t.shape)
    M_p, M_h = _leaf(rng, 2, 4, d), _leaf(rng, 2, 3, d)
    yield _component(
        f"head.san(K={san_steps})",
        lambda: cross_entropy(san_forward(M_p, M_h, san, training=False)[0], [1, 2]).value,
        [M_p, M_h] + [t for _, t in san.named()], tol, rng, max_coords=24)

    h, xin = _leaf(rng, 2, d), _leaf(rng, 2, d)
    w = _weights(rng, (2, d))
    yield _component("head.gru", lambda: _weighted_sum(san.gru(h, xin), w),
                     [h, xin] + [t for _, t in san.gru.named()], tol, rng, max_coords=24)

    probs_in = _leaf(rng, 4, 3)
    yield _component("loss.cross_entropy",
                     lambda: cross_entropy(T.softmax(probs_in), [0, 1, 2, 1]).value, [probs_in], tol, rng)
    scores, y = _leaf(rng, 5), rng.normal(size=5)
    yield _component("loss.mse", lambda: mse(scores, y).value, [scores], tol, rng)
    sets = [_leaf(rng, 4), _leaf(rng, 3)]
    yield _component("loss.ranking_nll", lambda: ranking_nll(sets, [1, 0], gamma=1.0).value, sets, tol, rng)


def run_suite(tol=1e-4, seed=0, san_steps=5):
    return list(suite(tol, seed, san_steps))
