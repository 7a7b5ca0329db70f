"""Backend selection for the hot PatchMatch kernels.

The kernel module is written in Cython pure-python mode: the same source
runs compiled (fast) or interpreted (slow, for environments without a C
toolchain). Import order here prefers the compiled extension; set
``EDGEMVS_BACKEND=python`` to force the interpreted version.
"""

from __future__ import annotations

import importlib.util
import os
import warnings
from pathlib import Path

_FORCE = os.environ.get("EDGEMVS_BACKEND", "").strip().lower()


def _load_interpreted():
    """Load kernels.py as plain python even when the extension is built."""
    path = Path(__file__).with_name("kernels.py")
    spec = importlib.util.spec_from_file_location("edgemvs._native._kernels_py", path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


if _FORCE == "python":
    kernels = _load_interpreted()
else:
    from . import kernels  # prefers the compiled extension when present

    if not getattr(kernels, "COMPILED", False) and _FORCE != "native":
        warnings.warn(
            "edgemvs compiled kernels unavailable; falling back to the "
            "interpreted implementation (expect large slowdowns)",
            RuntimeWarning,
        )

BACKEND = "native" if getattr(kernels, "COMPILED", False) else "python"


def get_kernels(backend: str | None = None):
    """Return the kernel module for a given backend ("native" or "python").

    With ``backend=None`` returns the default selection. Requesting
    "native" when the extension is not built raises ImportError.
    """
    if backend is None:
        return kernels
    if backend == "python":
        if BACKEND == "python":
            return kernels
        return _load_interpreted()
    if backend == "native":
        if BACKEND != "native":
            raise ImportError("compiled edgemvs kernels are not available")
        return kernels
    raise ValueError(f"unknown backend {backend!r}")
