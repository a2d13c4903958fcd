"""Optimisers, gradient clipping and the warmup-linear learning-rate schedule."""
import math

import numpy as np

from . import _kernels
from .errors import NumericError


def lr_at(step, total_steps, lr_peak, warmup_fraction):
    """Linear ramp 0 -> ``lr_peak`` over the warmup, then linear decay to 0 at ``total_steps``."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_fraction * total_steps
    if step < warmup:
        return lr_peak * (step / warmup)
    if step >= total_steps:
        return 0.0
    return lr_peak * ((total_steps - step) / (total_steps - warmup))


def global_grad_norm(tensors):
    sq = 0.0
    for t in tensors:
        sq += float(np.dot(t.grad.reshape(-1), t.grad.reshape(-1)))
    return math.sqrt(sq)


def clip_gradients(tensors, clip_norm):
    """Rescale all gradients together so their global L2 norm is at most ``clip_norm``.

    Returns the applied scale (1.0 when no clipping was needed).
    """
    tensors = list(tensors)
    norm = global_grad_norm(tensors)
    if not math.isfinite(norm):
        raise NumericError(f"gradient norm is not finite: {norm}")
    if norm <= clip_norm:
        return 1.0
    scale = clip_norm / norm
    for t in tensors:
        t.grad *= scale
    return scale


class SGD:
    name = "sgd"

    def step(self, named_params, lr):
        for _, t in named_params:
            t.data -= lr * t.grad

    def state_arrays(self):
        return []

    def load_state_arrays(self, arrays):
        pass


class Adamax:
    """Adamax with a bias-corrected first moment and an infinity-norm accumulator.

    Each parameter keeps its own update count, so parameters that sit out a
    step (another task's head) are neither moved nor decayed.
    """

    name = "adamax"

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {}  # name -> [m, u, t]

    def step(self, named_params, lr):
        for name, t in named_params:
            st = self.state.get(name)
            if st is None:
                st = self.state[name] = [np.zeros(t.data.size), np.zeros(t.data.size), 0]
            st[2] += 1
            _kernels.adamax_update(
                t.data.reshape(-1), np.ascontiguousarray(t.grad).reshape(-1), st[0], st[1],
                float(lr), self.beta1, self.beta2, self.eps, st[2],
            )

    def state_arrays(self, shapes=None):
        """``(name, array)`` pairs for checkpointing, in insertion order."""
        out = []
        for name, (m, u, t) in self.state.items():
            shape = shapes[name] if shapes else m.shape
            out += [
                (f"optim.m.{name}", m.reshape(shape)),
                (f"optim.u.{name}", u.reshape(shape)),
                (f"optim.t.{name}", np.array([float(t)])),
            ]
        return out

    def load_state_arrays(self, arrays):
        self.state = {}
        for key, arr in arrays.items():
            if key.startswith("optim.m."):
                name = key[len("optim.m."):]
                self.state[name] = [
                    np.array(arr, dtype=np.float64).reshape(-1),
                    np.array(arrays[f"optim.u.{name}"], dtype=np.float64).reshape(-1),
                    int(arrays[f"optim.t.{name}"][0]),
                ]
