"""Selects the kernel backend at import time.

Prefers the compiled extension (skillsched._kernels); falls back to the
numpy implementation. SKILLSCHED_BACKEND=numpy|compiled forces a choice,
which is mainly useful for the kernel benchmark and for debugging.
"""

from __future__ import annotations

import os

from . import _kernels_np

_forced = os.environ.get("SKILLSCHED_BACKEND", "").strip().lower()

if _forced == "numpy":
    kernels = _kernels_np
elif _forced == "compiled":
    from . import _kernels as kernels  # type: ignore[no-redef]
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_np


def backend_name() -> str:
    return kernels.BACKEND_NAME


def available_backends():
    names = ["numpy"]
    try:
        from . import _kernels  # noqa: F401
        names.append("compiled")
    except ImportError:
        pass
    return names


def get_kernels(name: str):
    """Fetch a specific backend module (for cross-backend tests/benchmarks)."""
    if name == "numpy":
        return _kernels_np
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
