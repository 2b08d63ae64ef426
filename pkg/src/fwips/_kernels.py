"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``FWIPS_BACKEND=python`` forces the fallback.
"""

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS: dict[str, ModuleType] = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("FWIPS_BACKEND", "auto").lower()
if _requested == "auto":
    _active = "cython" if "cython" in BACKENDS else "python"
elif _requested in BACKENDS:
    _active = _requested
else:
    raise ImportError(f"FWIPS_BACKEND={_requested!r} is not available; have {sorted(BACKENDS)}")


def active() -> str:
    return _active


def use(name: str) -> str:
    """Switch backend, returning the previous one."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} is not available; have {sorted(BACKENDS)}")
    previous, _active = _active, name
    return previous


def knn_select(S, Q, k):
    return BACKENDS[_active].knn_select(S, Q, k)


def train_epoch(params, widths, X, Y, order, batch_size, lr):
    return BACKENDS[_active].train_epoch(params, widths, X, Y, order, batch_size, lr)
