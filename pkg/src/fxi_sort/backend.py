"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the NumPy
fallback takes over.  ``FXI_SORT_BACKEND`` (``auto``, ``compiled`` or
``numpy``) overrides the choice, and :func:`set_backend` switches at
runtime (used by the benchmark and the cross-backend tests).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_np

try:
    from . import _core as _compiled
except ImportError:  # extension not built; NumPy lane only
    _compiled = None

_active: ModuleType


def available_backends() -> tuple[str, ...]:
    return ("compiled", "numpy") if _compiled is not None else ("numpy",)


def set_backend(name: str) -> str:
    """Select ``compiled``, ``numpy`` or ``auto``; returns the active name."""
    global _active
    if name == "auto":
        _active = _compiled if _compiled is not None else _kernels_np
    elif name == "numpy":
        _active = _kernels_np
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel extension is not available")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    return _active.BACKEND_NAME


def kernels() -> ModuleType:
    """The currently active kernel module."""
    return _active


def backend_name() -> str:
    return _active.BACKEND_NAME


set_backend(os.environ.get("FXI_SORT_BACKEND", "auto"))
