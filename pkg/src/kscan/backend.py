"""Selects the compiled kernels when available, else the numpy fallback.

Set ``KSCAN_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("KSCAN_BACKEND", "").strip().lower()

compiled = None
if _forced != "python":
    try:
        from . import _kernels as compiled  # type: ignore[attr-defined]
    except ImportError:
        compiled = None

kernels = compiled if compiled is not None else _kernels_py
name = "cython" if compiled is not None else "python"


def get(backend: str | None = None):
    """Return a kernel module: 'cython', 'python', or None for the default."""
    if backend is None or backend == "auto":
        return kernels
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown backend {backend!r}")
