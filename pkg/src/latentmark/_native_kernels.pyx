# Compiled implementations of the hot image kernels.
#
# Semantics must stay in lockstep with latentmark._numpy_kernels; the test
# suite cross-checks both backends on random inputs.

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "native"


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, k, int stride, int pad):
    cdef double[:, :, ::1] xv = _as_f64(x)
    cdef double[:, :, :, ::1] kv = _as_f64(k)
    cdef Py_ssize_t h = xv.shape[0], w = xv.shape[1], ci = xv.shape[2]
    cdef Py_ssize_t kh = kv.shape[0], kw = kv.shape[1], co = kv.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((oh, ow, co))
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t oy, ox, ky, kx, c, o, iy, ix
    cdef double v
    for oy in range(oh):
        for ox in range(ow):
            for ky in range(kh):
                iy = oy * stride + ky - pad
                if iy < 0 or iy >= h:
                    continue
                for kx in range(kw):
                    ix = ox * stride + kx - pad
                    if ix < 0 or ix >= w:
                        continue
                    for c in range(ci):
                        v = xv[iy, ix, c]
                        for o in range(co):
                            ov[oy, ox, o] += v * kv[ky, kx, c, o]
    return out


def conv2d_vjp_input(g, k, int stride, int pad, int in_h, int in_w):
    cdef double[:, :, ::1] gv = _as_f64(g)
    # transpose to (ky, kx, co, ci) so the ci accumulation lanes are
    # contiguous and independent (vectorizable without FP reassociation)
    cdef double[:, :, :, ::1] kt = np.ascontiguousarray(
        np.asarray(k, dtype=np.float64).transpose(0, 1, 3, 2))
    cdef Py_ssize_t oh = gv.shape[0], ow = gv.shape[1], co = gv.shape[2]
    cdef Py_ssize_t kh = kt.shape[0], kw = kt.shape[1], ci = kt.shape[3]
    gx = np.zeros((in_h, in_w, ci))
    cdef double[:, :, ::1] gxv = gx
    cdef Py_ssize_t oy, ox, ky, kx, c, o, iy, ix
    cdef double v
    for oy in range(oh):
        for ox in range(ow):
            for ky in range(kh):
                iy = oy * stride + ky - pad
                if iy < 0 or iy >= in_h:
                    continue
                for kx in range(kw):
                    ix = ox * stride + kx - pad
                    if ix < 0 or ix >= in_w:
                        continue
                    for o in range(co):
                        v = gv[oy, ox, o]
                        for c in range(ci):
                            gxv[iy, ix, c] += v * kt[ky, kx, o, c]
    return gx


def conv2d_vjp_kernel(g, x, int kh, int kw, int stride, int pad):
    cdef double[:, :, ::1] gv = _as_f64(g)
    cdef double[:, :, ::1] xv = _as_f64(x)
    cdef Py_ssize_t oh = gv.shape[0], ow = gv.shape[1], co = gv.shape[2]
    cdef Py_ssize_t h = xv.shape[0], w = xv.shape[1], ci = xv.shape[2]
    gk = np.zeros((kh, kw, ci, co))
    cdef double[:, :, :, ::1] gkv = gk
    cdef Py_ssize_t oy, ox, ky, kx, c, o, iy, ix
    cdef double v
    for oy in range(oh):
        for ox in range(ow):
            for ky in range(kh):
                iy = oy * stride + ky - pad
                if iy < 0 or iy >= h:
                    continue
                for kx in range(kw):
                    ix = ox * stride + kx - pad
                    if ix < 0 or ix >= w:
                        continue
                    for c in range(ci):
                        v = xv[iy, ix, c]
                        for o in range(co):
                            gkv[ky, kx, c, o] += v * gv[oy, ox, o]
    return gk


cdef inline Py_ssize_t _clip_idx(Py_ssize_t i, Py_ssize_t n):
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def sepcorr(x, k1d, int axis):
    cdef double[:, :, ::1] xv = _as_f64(x)
    cdef double[::1] kv = _as_f64(k1d)
    cdef Py_ssize_t h = xv.shape[0], w = xv.shape[1], ch = xv.shape[2]
    cdef Py_ssize_t nk = kv.shape[0], cen = (nk - 1) // 2
    out = np.zeros((h, w, ch))
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t i, j, c, t, src
    cdef double kt
    if axis == 0:
        for i in range(h):
            for t in range(nk):
                src = _clip_idx(i + t - cen, h)
                kt = kv[t]
                for j in range(w):
                    for c in range(ch):
                        ov[i, j, c] += kt * xv[src, j, c]
    else:
        for i in range(h):
            for j in range(w):
                for t in range(nk):
                    src = _clip_idx(j + t - cen, w)
                    kt = kv[t]
                    for c in range(ch):
                        ov[i, j, c] += kt * xv[i, src, c]
    return out


def sepcorr_vjp(g, k1d, int axis):
    cdef double[:, :, ::1] gv = _as_f64(g)
    cdef double[::1] kv = _as_f64(k1d)
    cdef Py_ssize_t h = gv.shape[0], w = gv.shape[1], ch = gv.shape[2]
    cdef Py_ssize_t nk = kv.shape[0], cen = (nk - 1) // 2
    gx = np.zeros((h, w, ch))
    cdef double[:, :, ::1] gxv = gx
    cdef Py_ssize_t i, j, c, t, src
    cdef double kt
    if axis == 0:
        for i in range(h):
            for t in range(nk):
                src = _clip_idx(i + t - cen, h)
                kt = kv[t]
                for j in range(w):
                    for c in range(ch):
                        gxv[src, j, c] += kt * gv[i, j, c]
    else:
        for i in range(h):
            for j in range(w):
                for t in range(nk):
                    src = _clip_idx(j + t - cen, w)
                    kt = kv[t]
                    for c in range(ch):
                        gxv[i, src, c] += kt * gv[i, j, c]
    return gx


def warp_forward(x, sy, sx):
    cdef double[:, :, ::1] xv = _as_f64(x)
    cdef double[:, ::1] syv = _as_f64(sy)
    cdef double[:, ::1] sxv = _as_f64(sx)
    cdef Py_ssize_t h = xv.shape[0], w = xv.shape[1], ch = xv.shape[2]
    cdef Py_ssize_t oh = syv.shape[0], ow = syv.shape[1]
    out = np.empty((oh, ow, ch))
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t oy, ox, c, y0, x0, y1, x1
    cdef double py, px, fy, fx
    for oy in range(oh):
        for ox in range(ow):
            py = syv[oy, ox]
            px = sxv[oy, ox]
            if py < 0.0:
                py = 0.0
            if py > h - 1.0:
                py = h - 1.0
            if px < 0.0:
                px = 0.0
            if px > w - 1.0:
                px = w - 1.0
            y0 = <Py_ssize_t> py
            if y0 > h - 2:
                y0 = h - 2
            if y0 < 0:
                y0 = 0
            x0 = <Py_ssize_t> px
            if x0 > w - 2:
                x0 = w - 2
            if x0 < 0:
                x0 = 0
            fy = py - y0
            fx = px - x0
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            for c in range(ch):
                ov[oy, ox, c] = ((1 - fy) * (1 - fx) * xv[y0, x0, c]
                                 + (1 - fy) * fx * xv[y0, x1, c]
                                 + fy * (1 - fx) * xv[y1, x0, c]
                                 + fy * fx * xv[y1, x1, c])
    return out


def warp_vjp(g, sy, sx, int in_h, int in_w, int channels):
    cdef double[:, :, ::1] gv = _as_f64(g)
    cdef double[:, ::1] syv = _as_f64(sy)
    cdef double[:, ::1] sxv = _as_f64(sx)
    cdef Py_ssize_t oh = gv.shape[0], ow = gv.shape[1]
    gx = np.zeros((in_h, in_w, channels))
    cdef double[:, :, ::1] gxv = gx
    cdef Py_ssize_t oy, ox, c, y0, x0, y1, x1
    cdef double py, px, fy, fx, gg
    for oy in range(oh):
        for ox in range(ow):
            py = syv[oy, ox]
            px = sxv[oy, ox]
            if py < 0.0:
                py = 0.0
            if py > in_h - 1.0:
                py = in_h - 1.0
            if px < 0.0:
                px = 0.0
            if px > in_w - 1.0:
                px = in_w - 1.0
            y0 = <Py_ssize_t> py
            if y0 > in_h - 2:
                y0 = in_h - 2
            if y0 < 0:
                y0 = 0
            x0 = <Py_ssize_t> px
            if x0 > in_w - 2:
                x0 = in_w - 2
            if x0 < 0:
                x0 = 0
            fy = py - y0
            fx = px - x0
            y1 = y0 + 1 if y0 + 1 < in_h else in_h - 1
            x1 = x0 + 1 if x0 + 1 < in_w else in_w - 1
            for c in range(channels):
                gg = gv[oy, ox, c]
                gxv[y0, x0, c] += (1 - fy) * (1 - fx) * gg
                gxv[y0, x1, c] += (1 - fy) * fx * gg
                gxv[y1, x0, c] += fy * (1 - fx) * gg
                gxv[y1, x1, c] += fy * fx * gg
    return gx
