"""Hot numeric kernels with a compiled backend and a numpy fallback.

The compiled module ``_fast`` is used when it has been built (``pip install
-e .`` runs the Cython build); otherwise the numpy module ``_reference`` is
selected at import. Both expose the same functions and agree to rounding.
"""
from . import _reference

try:
    from . import _fast
except ImportError:  # extension not built
    _fast = None

_BACKENDS = {"python": _reference}
if _fast is not None:
    _BACKENDS["cython"] = _fast

_impl = _fast if _fast is not None else _reference
BACKEND = "cython" if _fast is not None else "python"

_NAMES = (
    "softmax_forward",
    "softmax_backward",
    "log_softmax_forward",
    "log_softmax_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "gelu_forward",
    "gelu_backward",
    "adamax_update",
)


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Switch the active kernel module for this process and return the old name."""
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    previous = BACKEND
    _impl = _BACKENDS[name]
    BACKEND = name
    _bind()
    return previous


def _bind():
    g = globals()
    for name in _NAMES:
        g[name] = getattr(_impl, name)


_bind()
