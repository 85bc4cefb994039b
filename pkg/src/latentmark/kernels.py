"""Backend selection for the hot image kernels.

Two implementations exist with identical semantics: a compiled extension
(``latentmark._native_kernels``, Cython) and a pure-NumPy fallback.  The
default ``auto`` mode dispatches per kernel family to whichever side wins
on measured throughput (see benchmarks/bench_kernels.py): the compiled
loops win the gather/scatter kernels (bilinear warp, separable
correlation), while the BLAS-backed im2col path wins the convolutions.

Set ``LATENTMARK_KERNELS=native`` or ``=numpy`` to force one backend for
everything; ``native`` raises if the extension was not built.  ``auto``
falls back to pure NumPy when the extension is missing.
"""

from __future__ import annotations

import os

from . import _numpy_kernels

_requested = os.environ.get("LATENTMARK_KERNELS", "auto").lower()

if _requested not in ("auto", "native", "numpy"):
    raise ImportError(f"unknown LATENTMARK_KERNELS value: {_requested!r}")

_native = None
if _requested in ("auto", "native"):
    try:
        from . import _native_kernels as _native
    except ImportError:
        if _requested == "native":
            raise
        _native = None

if _requested == "numpy" or _native is None:
    BACKEND = "numpy"
    _conv_impl = _scatter_impl = _numpy_kernels
elif _requested == "native":
    BACKEND = "native"
    _conv_impl = _scatter_impl = _native
else:
    BACKEND = "auto(conv=numpy, warp/sepcorr=native)"
    _conv_impl = _numpy_kernels
    _scatter_impl = _native

conv2d_forward = _conv_impl.conv2d_forward
conv2d_vjp_input = _conv_impl.conv2d_vjp_input
conv2d_vjp_kernel = _conv_impl.conv2d_vjp_kernel
sepcorr = _scatter_impl.sepcorr
sepcorr_vjp = _scatter_impl.sepcorr_vjp
warp_forward = _scatter_impl.warp_forward
warp_vjp = _scatter_impl.warp_vjp


def get_backends() -> dict:
    """Name -> module for every importable backend (used by the benchmark
    and the backend-equivalence tests)."""
    out = {"numpy": _numpy_kernels}
    if _native is not None:
        out["native"] = _native
    else:
        try:
            from . import _native_kernels
            out["native"] = _native_kernels
        except ImportError:
            pass
    return out
