"""Pure numpy row kernels.

Every function takes C-contiguous float64 arrays. Row kernels operate on
2-D ``(rows, n)`` arrays; callers reshape higher-rank tensors first.
"""
import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def softmax_forward(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def log_softmax_forward(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_backward(y, g):
    return g - np.exp(y) * g.sum(axis=1, keepdims=True)


def layer_norm_forward(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd.ravel()


def layer_norm_backward(g, xhat, rstd, gain):
    dgain = (g * xhat).sum(axis=0)
    dbias = g.sum(axis=0)
    gx = g * gain
    dx = rstd[:, None] * (
        gx
        - gx.mean(axis=1, keepdims=True)
        - xhat * (gx * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu_forward(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return g * (cdf + x * pdf)


def adamax_update(param, grad, m, u, lr, beta1, beta2, eps, step):
    """In-place Adamax step. ``step`` is the 1-based update count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    np.maximum(beta2 * u, np.abs(grad), out=u)
    lr_t = lr / (1.0 - beta1 ** step)
    param -= lr_t * m / np.maximum(u, eps)
