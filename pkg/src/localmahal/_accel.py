"""Backend selection for the hot coordinate-ascent kernels.

Two interchangeable implementations of each inner loop exist: a numba
``@njit`` version and a pure-numpy version. The active one is picked at
import time from the ``LOCALMAHAL_BACKEND`` environment variable:

    LOCALMAHAL_BACKEND=numba   force numba (ImportError if unavailable)
    LOCALMAHAL_BACKEND=numpy   force the pure-numpy fallback
    unset / auto               numba when importable, numpy otherwise

``get_kernels(backend)`` exposes both so the benchmark can time them
side by side regardless of the ambient flag.
"""

import os

import numpy as np

__all__ = ["BACKEND", "AVAILABLE_BACKENDS", "get_kernels"]


def _sweep_cached_py(K, alphas, f, order, margins, cap):
    """One coordinate-ascent sweep over `order` with a precomputed kernel
    matrix. Mutates alphas and f in place; returns the number of updates."""
    n_updates = 0
    for i in order:
        kii = K[i, i]
        if kii <= 0.0:
            continue
        new = alphas[i] + (margins[i] - f[i]) / kii
        if new < 0.0:
            new = 0.0
        elif new > cap:
            new = cap
        step = new - alphas[i]
        if step != 0.0:
            alphas[i] = new
            f += step * K[i]
            n_updates += 1
    return n_updates


def _sweep_ondemand_py(Xt, kdiag, alphas, f, order, margins, cap):
    """Sweep without a cached kernel matrix: rows of the quadratic-kernel
    Gram are recomputed from the stored difference vectors as needed."""
    n_updates = 0
    for i in order:
        kii = kdiag[i]
        if kii <= 0.0:
            continue
        new = alphas[i] + (margins[i] - f[i]) / kii
        if new < 0.0:
            new = 0.0
        elif new > cap:
            new = cap
        step = new - alphas[i]
        if step != 0.0:
            alphas[i] = new
            row = Xt @ Xt[i]
            f += step * row * row
            n_updates += 1
    return n_updates


_NUMPY_KERNELS = {
    "sweep_cached": _sweep_cached_py,
    "sweep_ondemand": _sweep_ondemand_py,
}

AVAILABLE_BACKENDS = ["numpy"]

try:
    from numba import njit
except ImportError:
    njit = None

if njit is not None:

    @njit(nogil=True)
    def _sweep_cached_jit(K, alphas, f, order, margins, cap):
        n = f.shape[0]
        n_updates = 0
        for idx in range(order.shape[0]):
            i = order[idx]
            kii = K[i, i]
            if kii <= 0.0:
                continue
            new = alphas[i] + (margins[i] - f[i]) / kii
            if new < 0.0:
                new = 0.0
            elif new > cap:
                new = cap
            step = new - alphas[i]
            if step != 0.0:
                alphas[i] = new
                for j in range(n):
                    f[j] += step * K[i, j]
                n_updates += 1
        return n_updates

    @njit(nogil=True)
    def _sweep_ondemand_jit(Xt, kdiag, alphas, f, order, margins, cap):
        n, d = Xt.shape
        n_updates = 0
        for idx in range(order.shape[0]):
            i = order[idx]
            kii = kdiag[i]
            if kii <= 0.0:
                continue
            new = alphas[i] + (margins[i] - f[i]) / kii
            if new < 0.0:
                new = 0.0
            elif new > cap:
                new = cap
            step = new - alphas[i]
            if step != 0.0:
                alphas[i] = new
                for j in range(n):
                    dot = 0.0
                    for c in range(d):
                        dot += Xt[j, c] * Xt[i, c]
                    f[j] += step * dot * dot
                n_updates += 1
        return n_updates

    _NUMBA_KERNELS = {
        "sweep_cached": _sweep_cached_jit,
        "sweep_ondemand": _sweep_ondemand_jit,
    }
    AVAILABLE_BACKENDS.append("numba")


_requested = os.environ.get("LOCALMAHAL_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"LOCALMAHAL_BACKEND must be 'numba', 'numpy' or 'auto', got {_requested!r}"
    )
if _requested == "numba" and njit is None:
    raise ImportError("LOCALMAHAL_BACKEND=numba but numba is not importable")

if _requested in ("auto", "numba") and njit is not None:
    BACKEND = "numba"
else:
    BACKEND = "numpy"


def get_kernels(backend=None):
    """Return the kernel table for `backend` (default: the active one)."""
    backend = BACKEND if backend is None else backend
    if backend == "numpy":
        return _NUMPY_KERNELS
    if backend == "numba":
        if njit is None:
            raise ImportError("numba backend requested but numba is not importable")
        return _NUMBA_KERNELS
    raise ValueError(f"unknown backend {backend!r}")


def warm_up(backend=None):
    """Trigger JIT compilation so later timings exclude compile cost."""
    kernels = get_kernels(backend)
    K = np.eye(2)
    Xt = np.eye(2)
    a = np.zeros(2)
    f = np.zeros(2)
    order = np.arange(2, dtype=np.int64)
    m = np.full(2, 2.0)
    kernels["sweep_cached"](K, a.copy(), f.copy(), order, m, 1e12)
    kernels["sweep_ondemand"](Xt, np.ones(2), a.copy(), f.copy(), order, m, 1e12)
