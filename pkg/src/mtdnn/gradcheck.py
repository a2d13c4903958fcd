"""Central-difference gradient verification."""
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple = ()  # (parameter index, flat coordinate)
    per_param: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def _scalar(f):
    with no_grad():
        value = f()
    v = value.item() if hasattr(value, "item") else float(value)
    if not np.isfinite(v):
        raise NumericError(f"objective is not finite: {v}")
    return v


def _pick_coords(grad, limit, rng):
    """All coordinates, or up to ``limit`` of them biased towards non-zero gradients."""
    n = grad.size
    if limit is None or n <= limit:
        return np.arange(n)
    flat = grad.reshape(-1)
    nonzero = np.flatnonzero(flat)
    zero = np.flatnonzero(flat == 0)
    k_nz = min(len(nonzero), max(limit - limit // 4, limit - len(zero)))
    picked = [rng.choice(nonzero, size=k_nz, replace=False)] if k_nz else []
    k_z = min(len(zero), limit - k_nz)
    if k_z:
        picked.append(rng.choice(zero, size=k_z, replace=False))
    return np.sort(np.concatenate(picked))


def grad_check(f, params, h=1e-5, tol=1e-4, max_coords=None, rng=None, floor=1e-5):
    """Compare backward gradients of ``f`` against central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params`` (a tensor or list of leaf tensors with ``requires_grad``).
    The relative error at a coordinate is ``|a - n| / max(|a|, |n|, c)``
    with ``c = floor * max(1, |f|)``. Rounding noise in the difference grows
    like ``1e-16 * |f| / h``, so ``c`` keeps exactly-zero gradients from
    turning that noise into a large ratio.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if not isinstance(params, (list, tuple)):
        params = [params]
    rng = rng if rng is not None else np.random.default_rng(0)

    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.item()):
        raise NumericError("objective is not finite at the base point")
    cutoff = floor * max(1.0, abs(loss.item()))
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst_err, worst_at, total = 0.0, (), 0
    per_param = []
    for pi, (p, a) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        param_worst = 0.0
        for idx in _pick_coords(a, max_coords, rng):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = _scalar(f)
            flat[idx] = orig - h
            fm = _scalar(f)
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            ai = a.reshape(-1)[idx]
            err = abs(ai - numeric) / max(abs(ai), abs(numeric), cutoff)
            total += 1
            if err > param_worst:
                param_worst = err
            if err > worst_err:
                worst_err, worst_at = err, (pi, int(idx))
        per_param.append(param_worst)
    for p in params:
        p.zero_grad()
    return GradCheckReport(worst_err, tol, total, worst_at, per_param)
