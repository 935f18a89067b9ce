"""Kernel selection.

The compiled extension is used when it imports, unless ``OTNAV_PURE_PYTHON``
is set to a non-empty value other than ``0``.
"""

from __future__ import annotations

import os

from . import _pykernels as python_kernels

compiled_kernels = None
if os.environ.get("OTNAV_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as compiled_kernels
    except ImportError:  # pragma: no cover - depends on the build
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "compiled" if compiled_kernels is not None else "python"

INT64_SAFE = 2**62


def get(name: str | None = None):
    """Kernel module by name (``"compiled"``, ``"python"`` or None for the default)."""
    if name is None:
        return kernels
    if name == "python":
        return python_kernels
    if name == "compiled":
        if compiled_kernels is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled_kernels
    raise ValueError(f"unknown kernel backend {name!r}")
