"""Backend selection for the hot kernels.

The compiled Cython module is used when it was built; otherwise (or when
``MVCLIP_PURE=1`` is set) the numpy fallback is used.  Both expose
``gelu_forward``, ``gelu_backward`` and ``trace``.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("MVCLIP_PURE", "") not in ("1", "true", "on"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ("compiled"/"python"), default the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def gelu(x: np.ndarray, backend=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact GELU; returns (output, Phi(x)) with x's dtype."""
    impl = backend or _impl
    flat = np.ascontiguousarray(x).reshape(-1)
    out = np.empty_like(flat)
    cdf = np.empty_like(flat)
    impl.gelu_forward(flat, out, cdf)
    return out.reshape(x.shape), cdf.reshape(x.shape)


def gelu_grad(x: np.ndarray, cdf: np.ndarray, g: np.ndarray, backend=None) -> np.ndarray:
    impl = backend or _impl
    shape = x.shape
    flat = np.ascontiguousarray(x).reshape(-1)
    gflat = np.ascontiguousarray(g, dtype=x.dtype).reshape(-1)
    out = np.empty_like(flat)
    impl.gelu_backward(flat, np.ascontiguousarray(cdf).reshape(-1), gflat, out)
    return out.reshape(shape)
