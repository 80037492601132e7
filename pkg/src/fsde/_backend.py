"""Convolution backend selection.

The compiled extension is preferred when built; the NumPy kernels are the
always-available fallback.  ``FSDE_BACKEND`` (``cython`` or ``numpy``)
overrides the default.  Backends implement identical contracts but may
round differently at the reduction-order level; bit-reproducibility
guarantees hold per backend.
"""

import os

from . import _volterra_np
from .exceptions import FsdeValueError

try:
    from . import _volterra_cy
except ImportError:  # extension not built
    _volterra_cy = None

_ALIASES = {
    "numpy": _volterra_np, "np": _volterra_np, "py": _volterra_np,
    "python": _volterra_np,
    "cython": _volterra_cy, "cy": _volterra_cy, "c": _volterra_cy,
}


def available_backends():
    out = ["numpy"]
    if _volterra_cy is not None:
        out.insert(0, "cython")
    return tuple(out)


def get_backend(name=None):
    """Resolve a kernel backend module by name (None = env/default)."""
    if name is None:
        name = os.environ.get("FSDE_BACKEND", "").strip().lower()
        if not name:
            return _volterra_cy if _volterra_cy is not None else _volterra_np
    mod = _ALIASES.get(str(name).strip().lower())
    if mod is None:
        raise FsdeValueError(
            "unknown backend %r (available: %s)" % (name, ", ".join(available_backends()))
        )
    return mod
