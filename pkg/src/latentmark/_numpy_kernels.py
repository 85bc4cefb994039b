"""NumPy implementations of the hot image kernels.

This is the pure-Python fallback for the compiled extension module
(``latentmark._native_kernels``).  Both backends expose the same functions
with identical semantics; ``latentmark.kernels`` picks one at import time.

Conventions shared by both backends:
  * images are C-contiguous float64 arrays, shape (H, W, C), row-major;
  * conv2d is cross-correlation with zero padding;
  * separable correlation (sepcorr) and bilinear warps clamp to the border.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND_NAME = "numpy"


def _as_f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# conv2d: y[oy,ox,co] = sum_{ky,kx,ci} x[oy*s+ky-p, ox*s+kx-p, ci] * k[ky,kx,ci,co]
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    x = _as_f64(x)
    k = _as_f64(k)
    h, w, ci = x.shape
    kh, kw = k.shape[0], k.shape[1]
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0))) if pad else x
    s0, s1, s2 = xp.strides
    cols = as_strided(
        xp,
        shape=(oh, ow, kh, kw, ci),
        strides=(stride * s0, stride * s1, s0, s1, s2),
        writeable=False,
    )
    return np.tensordot(cols, k, axes=([2, 3, 4], [0, 1, 2]))


def conv2d_vjp_input(g: np.ndarray, k: np.ndarray, stride: int, pad: int,
                     in_h: int, in_w: int) -> np.ndarray:
    g = _as_f64(g)
    k = _as_f64(k)
    oh, ow, _ = g.shape
    kh, kw, ci, _ = k.shape
    # u[oy,ox,ky,kx,ci] = sum_co g[oy,ox,co] * k[ky,kx,ci,co]
    u = np.tensordot(g, k, axes=([2], [3]))
    gxp = np.zeros((in_h + 2 * pad, in_w + 2 * pad, ci))
    for ky in range(kh):
        for kx in range(kw):
            gxp[ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += u[:, :, ky, kx, :]
    return gxp[pad:pad + in_h, pad:pad + in_w] if pad else gxp


def conv2d_vjp_kernel(g: np.ndarray, x: np.ndarray, kh: int, kw: int,
                      stride: int, pad: int) -> np.ndarray:
    g = _as_f64(g)
    x = _as_f64(x)
    oh, ow, co = g.shape
    ci = x.shape[2]
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0))) if pad else x
    gk = np.empty((kh, kw, ci, co))
    for ky in range(kh):
        for kx in range(kw):
            v = xp[ky:ky + stride * oh:stride, kx:kx + stride * ow:stride, :]
            gk[ky, kx] = np.tensordot(v, g, axes=([0, 1], [0, 1]))
    return gk


# ---------------------------------------------------------------------------
# Separable 1-D correlation along an axis, clamp-to-edge border.
# y[i] = sum_t k1d[t] * x[clip(i + t - center)]
# ---------------------------------------------------------------------------

def sepcorr(x: np.ndarray, k1d: np.ndarray, axis: int) -> np.ndarray:
    x = _as_f64(x)
    k1d = _as_f64(k1d)
    n = x.shape[axis]
    c = (len(k1d) - 1) // 2
    padw = [(0, 0)] * x.ndim
    padw[axis] = (c, c)
    xp = np.pad(x, padw, mode="edge")
    out = np.zeros_like(x)
    sl = [slice(None)] * x.ndim
    for t, kt in enumerate(k1d):
        sl[axis] = slice(t, t + n)
        out += kt * xp[tuple(sl)]
    return out


def sepcorr_vjp(g: np.ndarray, k1d: np.ndarray, axis: int) -> np.ndarray:
    g = _as_f64(g)
    k1d = _as_f64(k1d)
    n = g.shape[axis]
    c = (len(k1d) - 1) // 2
    # adjoint of (edge-pad then valid correlate): full scatter, then fold the
    # padded borders back onto the edge rows
    pshape = list(g.shape)
    pshape[axis] = n + 2 * c
    gxp = np.zeros(pshape)
    sl = [slice(None)] * g.ndim
    for t, kt in enumerate(k1d):
        sl[axis] = slice(t, t + n)
        gxp[tuple(sl)] += kt * g
    sl[axis] = slice(c, c + n)
    gx = gxp[tuple(sl)].copy()
    if c:
        first = [slice(None)] * g.ndim
        first[axis] = slice(0, 1)
        head = [slice(None)] * g.ndim
        head[axis] = slice(0, c)
        gx[tuple(first)] += gxp[tuple(head)].sum(axis=axis, keepdims=True)
        last = [slice(None)] * g.ndim
        last[axis] = slice(n - 1, n)
        tail = [slice(None)] * g.ndim
        tail[axis] = slice(c + n, None)
        gx[tuple(last)] += gxp[tuple(tail)].sum(axis=axis, keepdims=True)
    return gx


# ---------------------------------------------------------------------------
# Bilinear sampling at arbitrary (sy, sx) coordinates, clamp-to-edge.
# ---------------------------------------------------------------------------

def _bilinear_coords(sy: np.ndarray, sx: np.ndarray, h: int, w: int):
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(sy).astype(np.intp), h - 2) if h > 1 else np.zeros_like(sy, dtype=np.intp)
    x0 = np.minimum(np.floor(sx).astype(np.intp), w - 2) if w > 1 else np.zeros_like(sx, dtype=np.intp)
    fy = sy - y0
    fx = sx - x0
    return y0, x0, fy, fx


def warp_forward(x: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    x = _as_f64(x)
    h, w, _ = x.shape
    y0, x0, fy, fx = _bilinear_coords(sy, sx, h, w)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = fy[..., None]
    fx = fx[..., None]
    return ((1 - fy) * (1 - fx) * x[y0, x0]
            + (1 - fy) * fx * x[y0, x1]
            + fy * (1 - fx) * x[y1, x0]
            + fy * fx * x[y1, x1])


def warp_vjp(g: np.ndarray, sy: np.ndarray, sx: np.ndarray,
             in_h: int, in_w: int, channels: int) -> np.ndarray:
    g = _as_f64(g)
    y0, x0, fy, fx = _bilinear_coords(sy, sx, in_h, in_w)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = fy[..., None]
    fx = fx[..., None]
    gx = np.zeros((in_h * in_w, channels))
    flat = lambda yy, xx: (yy * in_w + xx).ravel()
    gr = g.reshape(-1, channels)
    np.add.at(gx, flat(y0, x0), ((1 - fy) * (1 - fx)).reshape(-1, 1) * gr)
    np.add.at(gx, flat(y0, x1), ((1 - fy) * fx).reshape(-1, 1) * gr)
    np.add.at(gx, flat(y1, x0), (fy * (1 - fx)).reshape(-1, 1) * gr)
    np.add.at(gx, flat(y1, x1), (fy * fx).reshape(-1, 1) * gr)
    return gx.reshape(in_h, in_w, channels)
