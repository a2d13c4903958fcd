"""Shared layers: input packing, summed embeddings and a post-norm transformer stack."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError, DimensionError, InputError, NumericError
from .tensor import (
    Tensor,
    add_bias,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax,
    swap_last,
    transpose,
)

MAX_LEN = 512


@dataclass(frozen=True)
class PackedInput:
    """Token ids ``[CLS] a... [SEP] (b... [SEP])`` with segment ids.

    ``len_a``/``len_b`` count the sentence tokens that survived truncation;
    ``len_b`` is 0 for single sentences.
    """

    token_ids: tuple
    segment_ids: tuple
    len_a: int
    len_b: int = 0
    cls_index: int = 0

    def __post_init__(self):
        m = len(self.token_ids)
        if m != len(self.segment_ids):
            raise InputError("token_ids and segment_ids differ in length")
        if m > MAX_LEN:
            raise InputError(f"packed length {m} exceeds {MAX_LEN}")
        seg = self.segment_ids
        if any(s not in (0, 1) for s in seg) or any(x > y for x, y in zip(seg, seg[1:])):
            raise InputError("segment ids must be non-decreasing values in {0, 1}")
        expected = 1 + self.len_a + 1 + (self.len_b + 1 if self.len_b else 0)
        if expected != m:
            raise InputError(f"length {m} inconsistent with sentence lengths {self.len_a}, {self.len_b}")

    def __len__(self):
        return len(self.token_ids)

    @property
    def is_pair(self):
        return self.len_b > 0

    @property
    def premise_rows(self):
        return slice(1, 1 + self.len_a)

    @property
    def hypothesis_rows(self):
        start = 2 + self.len_a
        return slice(start, start + self.len_b)


def pack(sentence_a, sentence_b=None, max_len=MAX_LEN, *, cls_id, sep_id):
    """Lay out one sentence or a sentence pair, truncating to ``max_len``."""
    a = list(sentence_a)
    b = None if sentence_b is None else list(sentence_b)
    if not a or (b is not None and not b):
        raise InputError("cannot pack an empty sentence")
    if max_len > MAX_LEN:
        raise InputError(f"max_len {max_len} exceeds {MAX_LEN}")
    if b is None:
        if max_len < 3:
            raise InputError("max_len too small for [CLS] x [SEP]")
        a = a[: max_len - 2]
        ids = [cls_id] + a + [sep_id]
        return PackedInput(tuple(ids), (0,) * len(ids), len(a), 0)

    if max_len < 5:
        raise InputError("max_len too small for a sentence pair")
    budget = max_len - 3
    while len(a) + len(b) > budget:
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()
    ids = [cls_id] + a + [sep_id] + b + [sep_id]
    segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return PackedInput(tuple(ids), tuple(segments), len(a), len(b))


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d: int = 768
    n_layers: int = 12
    n_heads: int = 12
    max_len: int = MAX_LEN
    ffn_mult: int = 4
    hidden_dropout: float = 0.1
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.vocab_size < 1 or self.d < 1 or self.n_layers < 0 or self.n_heads < 1:
            raise ConfigError(f"invalid encoder dimensions: {self}")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 1 <= self.max_len <= MAX_LEN:
            raise ConfigError(f"max_len must be in [1, {MAX_LEN}]")
        if not 0.0 <= self.hidden_dropout < 1.0:
            raise ConfigError("hidden_dropout must be in [0, 1)")


def encoder_shapes(cfg):
    """Ordered ``(name, shape)`` list of every encoder parameter."""
    d, f = cfg.d, cfg.d * cfg.ffn_mult
    shapes = [
        ("encoder.word_emb", (cfg.vocab_size, d)),
        ("encoder.segment_emb", (2, d)),
        ("encoder.position_emb", (cfg.max_len, d)),
    ]
    for i in range(cfg.n_layers):
        p = f"encoder.layer{i}."
        for proj in ("query", "key", "value", "output"):
            shapes += [(p + f"attn.{proj}.weight", (d, d)), (p + f"attn.{proj}.bias", (d,))]
        shapes += [(p + "attn_ln.gain", (d,)), (p + "attn_ln.bias", (d,))]
        shapes += [
            (p + "ffn.in.weight", (d, f)),
            (p + "ffn.in.bias", (f,)),
            (p + "ffn.out.weight", (f, d)),
            (p + "ffn.out.bias", (d,)),
        ]
        shapes += [(p + "ffn_ln.gain", (d,)), (p + "ffn_ln.bias", (d,))]
    return shapes


def init_tensor(name, shape, rng, std=0.02):
    """Normal(0, std) weights and embeddings, zero biases, unit layer-norm gains."""
    if name.endswith(".gain"):
        return Tensor(np.ones(shape), requires_grad=True)
    if name.endswith(".bias"):
        return Tensor(np.zeros(shape), requires_grad=True)
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config, rng):
        tensors = {name: init_tensor(name, shape, rng) for name, shape in encoder_shapes(config)}
        return cls(config, tensors)

    def __post_init__(self):
        if self.tensors:
            self.validate()

    def validate(self):
        expected = dict(encoder_shapes(self.config))
        bad = sorted(
            name
            for name in set(expected) | set(self.tensors)
            if name not in expected
            or name not in self.tensors
            or tuple(self.tensors[name].shape) != expected[name]
        )
        if bad:
            raise CheckpointError("encoder parameter mismatch: " + ", ".join(bad))

    def __getitem__(self, name):
        return self.tensors[name]

    def named(self):
        return [(name, self.tensors[name]) for name, _ in encoder_shapes(self.config)]


def lexicon_encode(token_ids, segment_ids, params):
    """Sum word, segment and position embeddings; ids shaped ``(m,)`` or ``(B, m)``."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if token_ids.shape != segment_ids.shape:
        raise DimensionError(f"token ids {token_ids.shape} vs segment ids {segment_ids.shape}")
    m = token_ids.shape[-1]
    positions = np.broadcast_to(np.arange(m), token_ids.shape)
    words = embedding(params["encoder.word_emb"], token_ids)
    segments = embedding(params["encoder.segment_emb"], segment_ids)
    pos = embedding(params["encoder.position_emb"], positions)
    return words + segments + pos


def lexicon_encode_packed(packed, params):
    return lexicon_encode(packed.token_ids, packed.segment_ids, params)


def _split_heads(x, n_heads):
    *lead, m, d = x.shape
    x = reshape(x, tuple(lead) + (m, n_heads, d // n_heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return transpose(x, axes)


def _merge_heads(x):
    *lead, h, m, dh = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return reshape(transpose(x, axes), tuple(lead) + (m, h * dh))


def attention(x, params, prefix, n_heads, attn_log=None):
    """Multi-head scaled dot-product self-attention (no masking)."""
    def proj(name, inp):
        return add_bias(matmul(inp, params[prefix + name + ".weight"]), params[prefix + name + ".bias"])

    d = x.shape[-1]
    q = _split_heads(proj("query", x), n_heads)
    k = _split_heads(proj("key", x), n_heads)
    v = _split_heads(proj("value", x), n_heads)
    scores = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(d // n_heads))
    weights = softmax(scores, axis=-1)
    if attn_log is not None:
        attn_log.append(weights.data)
    ctx = _merge_heads(matmul(weights, v))
    return proj("output", ctx)


def encoder_layer(x, params, i, cfg, training, rng, attn_log=None):
    p = f"encoder.layer{i}."
    attn = attention(x, params, p + "attn.", cfg.n_heads, attn_log)
    attn = dropout(attn, cfg.hidden_dropout, training, rng)
    x = layer_norm(x + attn, params[p + "attn_ln.gain"], params[p + "attn_ln.bias"], cfg.ln_eps)
    hidden = gelu(add_bias(matmul(x, params[p + "ffn.in.weight"]), params[p + "ffn.in.bias"]))
    ff = add_bias(matmul(hidden, params[p + "ffn.out.weight"]), params[p + "ffn.out.bias"])
    ff = dropout(ff, cfg.hidden_dropout, training, rng)
    return layer_norm(x + ff, params[p + "ffn_ln.gain"], params[p + "ffn_ln.bias"], cfg.ln_eps)


def transformer_encode(l1, params, training=False, rng=None, attn_log=None):
    """Contextual embeddings, same shape as ``l1`` (``(m, d)`` or ``(B, m, d)``).

    Pass a list as ``attn_log`` to collect each layer's attention weights.
    """
    cfg = params.config
    if l1.shape[-1] != cfg.d:
        raise DimensionError(f"input width {l1.shape[-1]} does not match d={cfg.d}")
    if training and cfg.hidden_dropout > 0 and rng is None:
        raise ConfigError("training with dropout needs an rng")
    x = dropout(l1, cfg.hidden_dropout, training, rng)
    for i in range(cfg.n_layers):
        try:
            x = encoder_layer(x, params, i, cfg, training, rng, attn_log)
        except NumericError as exc:
            raise NumericError(f"encoder layer {i}: {exc}") from exc
    return x


def cls_vector(C):
    """Contextual embedding of the leading [CLS] token."""
    if C.shape[-2] < 1:
        raise DimensionError("empty sequence has no [CLS] row")
    return C[..., 0, :]


def encode(packed, params, training=False, rng=None):
    """Encode one :class:`PackedInput` to its ``(m, d)`` contextual embeddings."""
    return transformer_encode(lexicon_encode_packed(packed, params), params, training, rng)
