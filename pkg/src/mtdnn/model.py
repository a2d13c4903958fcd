"""The multi-task model: one shared encoder plus a head per task."""
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, EncoderParams, lexicon_encode, transformer_encode
from .errors import CheckpointError, ConfigError
from .heads import (
    PAIR,
    RANKING,
    REGRESSION,
    SINGLE,
    classify_single,
    head_shapes,
    init_head,
    relevance,
    san_forward,
    similarity,
)
from .objectives import cross_entropy, mse, ranking_nll
from .rng import stream
from .tensor import concat, dropout, getitem, no_grad


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    san_steps: int = 5

    def __post_init__(self):
        if self.san_steps < 1:
            raise ConfigError("san_steps must be >= 1")

    @property
    def d(self):
        return self.encoder.d


def _group_by_layout(packed_list):
    """Bucket packed inputs with identical layout so they encode as one batch."""
    groups = OrderedDict()
    for i, p in enumerate(packed_list):
        groups.setdefault((len(p), p.len_a), []).append(i)
    return groups


class MTDNN:
    """Shared encoder parameters and an ordered mapping of task heads."""

    def __init__(self, config, encoder, heads=None, specs=None):
        self.config = config
        self.encoder = encoder
        self.heads = OrderedDict(heads or {})
        self.specs = OrderedDict(specs or {})

    @classmethod
    def create(cls, config, specs, seed):
        rng = stream(seed, "init")
        model = cls(config, EncoderParams.init(config.encoder, rng))
        for spec in specs:
            model.add_head(spec, rng)
        return model

    def add_head(self, spec, rng):
        if spec.name in self.heads:
            raise ConfigError(f"model already has a head for {spec.name!r}")
        self.heads[spec.name] = init_head(
            spec.task_type, self.config.d, spec.n_labels, rng, self.config.san_steps, spec.pred_dropout
        )
        self.specs[spec.name] = spec

    # -- parameters ----------------------------------------------------
    def head_parameters(self, task_name):
        return [(f"heads.{task_name}.{local}", t) for local, t in self.heads[task_name].named()]

    def named_parameters(self):
        named = list(self.encoder.named())
        for task_name in self.heads:
            named += self.head_parameters(task_name)
        return named

    def task_parameters(self, task_name):
        """Parameters that receive gradients from a batch of ``task_name``."""
        return list(self.encoder.named()) + self.head_parameters(task_name)

    def parameter_shapes(self):
        return [(name, tuple(t.shape)) for name, t in self.named_parameters()]

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.zero_grad()

    def state_dict(self):
        return OrderedDict((name, t.data.copy()) for name, t in self.named_parameters())

    def load_state_dict(self, arrays, prefix="", strict=True):
        """Copy arrays into parameters whose names start with ``prefix``.

        With ``strict`` every selected parameter must be present with the
        exact shape and no extra names under the prefix may appear.
        """
        own = OrderedDict((n, t) for n, t in self.named_parameters() if n.startswith(prefix))
        given = {n: a for n, a in arrays.items() if n.startswith(prefix)}
        bad = []
        for name, t in own.items():
            if name not in given:
                if strict:
                    bad.append(f"{name} (missing)")
            elif tuple(np.shape(given[name])) != tuple(t.shape):
                bad.append(f"{name} (shape {tuple(np.shape(given[name]))} != {tuple(t.shape)})")
        if strict:
            bad += [f"{n} (unexpected)" for n in given if n not in own]
        if bad:
            raise CheckpointError("checkpoint does not fit the model: " + "; ".join(bad))
        for name, t in own.items():
            if name in given:
                t.data[...] = given[name]

    # -- forward -------------------------------------------------------
    def _encode(self, packed_list, training, rng):
        for key, idx in _group_by_layout(packed_list).items():
            ids = np.array([packed_list[i].token_ids for i in idx])
            segs = np.array([packed_list[i].segment_ids for i in idx])
            l1 = lexicon_encode(ids, segs, self.encoder)
            yield key, idx, transformer_encode(l1, self.encoder, training, rng)

    def _ordered(self, pieces, order):
        out = concat(pieces, axis=0) if len(pieces) > 1 else pieces[0]
        perm = np.argsort(np.concatenate(order), kind="stable")
        return getitem(out, perm)

    def forward(self, task_name, inputs, training=False, rng=None):
        """Head outputs for a list of featurised inputs of one task.

        Classification: ``(B, n_labels)`` distributions. Regression: ``(B,)``
        scores. Ranking: a list with one relevance vector per query.
        """
        spec = self.specs[task_name]
        head = self.heads[task_name]
        p = spec.dropout
        if spec.task_type == RANKING:
            flat = [c for cands in inputs for c in cands]
            scores = self._cls_forward(flat, lambda x: relevance(x, head), p, training, rng)
            out, start = [], 0
            for cands in inputs:
                out.append(getitem(scores, slice(start, start + len(cands))))
                start += len(cands)
            return out
        if spec.task_type == SINGLE:
            return self._cls_forward(inputs, lambda x: classify_single(x, head), p, training, rng)
        if spec.task_type == REGRESSION:
            return self._cls_forward(inputs, lambda x: similarity(x, head), p, training, rng)
        if spec.task_type == PAIR:
            pieces, order = [], []
            for (m, la), idx, C in self._encode(inputs, training, rng):
                lb = m - la - 3
                M_p = dropout(getitem(C, (slice(None), slice(1, 1 + la))), p, training, rng)
                M_h = dropout(getitem(C, (slice(None), slice(2 + la, 2 + la + lb))), p, training, rng)
                probs, _ = san_forward(M_p, M_h, head, training, rng)
                pieces.append(probs)
                order.append(idx)
            return self._ordered(pieces, order)
        raise ConfigError(f"unknown task type {spec.task_type!r}")

    def _cls_forward(self, packed_list, head_fn, p, training, rng):
        pieces, order = [], []
        for _, idx, C in self._encode(packed_list, training, rng):
            x = dropout(getitem(C, (slice(None), 0)), p, training, rng)
            pieces.append(head_fn(x))
            order.append(idx)
        return self._ordered(pieces, order)

    def loss(self, task_name, inputs, targets, training=True, rng=None, gamma=1.0):
        spec = self.specs[task_name]
        out = self.forward(task_name, inputs, training, rng)
        if spec.is_classification:
            return cross_entropy(out, targets, task_name)
        if spec.task_type == REGRESSION:
            return mse(out, targets, task_name)
        return ranking_nll(out, targets, gamma, task_name)

    def predict(self, task_name, inputs, batch_size=64):
        """Eval-mode outputs as numpy: distributions, scores or per-query scores."""
        outs = []
        with no_grad():
            for start in range(0, len(inputs), batch_size):
                chunk = self.forward(task_name, inputs[start:start + batch_size], training=False)
                if isinstance(chunk, list):
                    outs.extend(t.data.copy() for t in chunk)
                else:
                    outs.append(chunk.data)
        if self.specs[task_name].task_type == RANKING:
            return outs
        return np.concatenate(outs, axis=0)


def expected_head_shapes(config, spec):
    return [(f"heads.{spec.name}.{n}", s) for n, s in head_shapes(spec.task_type, config.d, spec.n_labels)]


