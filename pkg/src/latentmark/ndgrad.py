"""Minimal dense-tensor math with exact reverse-mode derivatives.

A define-by-run Wengert tape over float64 NumPy arrays.  Every kernel used
by the embedding/attack pipelines registers an exact vector-Jacobian product;
the tape is rebuilt each optimization iteration (no graph caching).

Typical use::

    tape = Tape()
    x = tape.leaf(arr)
    y = gaussian_blur(affine_warp(x, 10.0, 0.9, 128, 128), 1.5)
    loss = ssum(square(y))
    grads = tape.backward({loss: 1.0})
    dx = grads[x]
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError, ParameterError

# When enabled, every op asserts its output is finite (debug aid; the
# optimization loop checks the scalar loss regardless).
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tensor:
    """A value on a tape.  Immutable once created."""

    __slots__ = ("tape", "value")

    def __init__(self, tape: "Tape", value: np.ndarray):
        self.tape = tape
        self.value = np.asarray(value, dtype=np.float64)
        if _DEBUG_CHECKS and not np.all(np.isfinite(self.value)):
            raise NumericError("non-finite tensor value")

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.out = out
        self.inputs = tuple(inputs)
        self.vjp = vjp


class Tape:
    """Records ops in execution order; backward visits each node once."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def leaf(self, value) -> Tensor:
        return Tensor(self, value)

    def _emit(self, value, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
        out = Tensor(self, value)
        self._nodes.append(_Node(out, inputs, vjp))
        return out

    def backward(self, seeds: Mapping[Tensor, object]) -> Dict[Tensor, np.ndarray]:
        """Propagate cotangents from `seeds` back to every reachable tensor.

        Returns a dict keyed by Tensor identity; leaves that receive no
        gradient are absent (treat as zero).
        """
        grads: Dict[Tensor, np.ndarray] = {}
        for var, ct in seeds.items():
            ct = np.broadcast_to(np.asarray(ct, dtype=np.float64), var.value.shape)
            if var in grads:
                grads[var] = grads[var] + ct
            else:
                grads[var] = np.array(ct, dtype=np.float64)
        for node in reversed(self._nodes):
            ct = grads.get(node.out)
            if ct is None:
                continue
            for inp, g in zip(node.inputs, node.vjp(ct)):
                if g is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + g
                else:
                    grads[inp] = g
        return grads


def _tensor_pair(a, b):
    if a.tape is not b.tape:
        raise ParameterError("operands live on different tapes")
    if a.value.shape != b.value.shape:
        raise DimensionError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")
    return a.tape


# ---------------------------------------------------------------------------
# elementwise / reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _tensor_pair(a, b)
    return tape._emit(a.value + b.value, (a, b), lambda ct: (ct, ct))


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _tensor_pair(a, b)
    return tape._emit(a.value - b.value, (a, b), lambda ct: (ct, -ct))


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _tensor_pair(a, b)
    av, bv = a.value, b.value
    return tape._emit(av * bv, (a, b), lambda ct: (ct * bv, ct * av))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.tape._emit(a.value * c, (a,), lambda ct: (ct * c,))


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    return a.tape._emit(a.value + c, (a,), lambda ct: (ct,))


def square(a: Tensor) -> Tensor:
    av = a.value
    return a.tape._emit(av * av, (a,), lambda ct: (2.0 * ct * av,))


def ssum(a: Tensor) -> Tensor:
    shape = a.value.shape
    return a.tape._emit(np.asarray(a.value.sum()), (a,),
                        lambda ct: (np.broadcast_to(ct, shape).copy(),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    tape = _tensor_pair(a, b)
    av, bv = a.value, b.value
    return tape._emit(np.asarray(np.vdot(av, bv)), (a, b),
                      lambda ct: (float(ct) * bv, float(ct) * av))


def elementwise_relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0  # derivative at exactly 0 is 0
    return a.tape._emit(np.where(mask, a.value, 0.0), (a,), lambda ct: (ct * mask,))


relu = elementwise_relu


def global_avg_pool(a: Tensor) -> Tensor:
    if a.value.ndim != 3:
        raise DimensionError("global_avg_pool expects (H, W, C)")
    h, w, c = a.value.shape
    inv = 1.0 / (h * w)

    def vjp(ct):
        return (np.broadcast_to(ct.reshape(1, 1, c) * inv, (h, w, c)).copy(),)

    return a.tape._emit(a.value.mean(axis=(0, 1)), (a,), vjp)


def linear_map(a: Tensor, m) -> Tensor:
    m_var = m if isinstance(m, Tensor) else None
    mv = m.value if m_var is not None else np.asarray(m, dtype=np.float64)
    if a.value.ndim != 1 or mv.ndim != 2 or a.value.shape[0] != mv.shape[0]:
        raise DimensionError(f"linear_map: {a.value.shape} @ {mv.shape}")
    av = a.value

    if m_var is None:
        return a.tape._emit(av @ mv, (a,), lambda ct: (ct @ mv.T,))

    def vjp(ct):
        return (ct @ mv.T, np.outer(av, ct))

    return a.tape._emit(av @ mv, (a, m_var), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.value.shape
    return a.tape._emit(a.value.reshape(shape), (a,), lambda ct: (ct.reshape(old),))


# ---------------------------------------------------------------------------
# image kernels
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; `kernel` is (k, k, Cin, Cout)."""
    k_var = kernel if isinstance(kernel, Tensor) else None
    kv = kernel.value if k_var is not None else np.asarray(kernel, dtype=np.float64)
    if x.value.ndim != 3 or kv.ndim != 4:
        raise DimensionError("conv2d expects image (H,W,Cin) and kernel (k,k,Cin,Cout)")
    kh, kw = kv.shape[0], kv.shape[1]
    if kh != kw or kh % 2 == 0:
        raise ParameterError("conv2d kernel must be square with odd extent")
    if stride < 1 or padding < 0:
        raise ParameterError("conv2d: stride >= 1 and padding >= 0 required")
    if x.value.shape[2] != kv.shape[2]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.value.shape[2]}, kernel {kv.shape[2]}")
    h, w = x.value.shape[0], x.value.shape[1]
    xv = x.value
    y = kernels.conv2d_forward(xv, kv, stride, padding)

    if k_var is None:
        def vjp(ct):
            return (kernels.conv2d_vjp_input(ct, kv, stride, padding, h, w),)
        return x.tape._emit(y, (x,), vjp)

    def vjp(ct):
        return (kernels.conv2d_vjp_input(ct, kv, stride, padding, h, w),
                kernels.conv2d_vjp_kernel(ct, xv, kh, kw, stride, padding))

    return x.tape._emit(y, (x, k_var), vjp)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian taps, half-width ceil(3*sigma), normalized to sum 1."""
    if sigma < 0:
        raise ParameterError("gaussian sigma must be >= 0")
    half = int(math.ceil(3.0 * sigma))
    t = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2) if sigma > 0 else np.ones(1)
    return k / k.sum()


def gaussian_blur(x: Tensor, sigma: float) -> Tensor:
    """Separable Gaussian filtering, clamp-to-edge borders; sigma 0 is identity."""
    if sigma < 0:
        raise ParameterError("gaussian sigma must be >= 0")
    if x.value.ndim != 3:
        raise DimensionError("gaussian_blur expects (H, W, C)")
    if sigma == 0:
        return x
    k1d = gaussian_kernel_1d(sigma)
    y = kernels.sepcorr(kernels.sepcorr(x.value, k1d, 0), k1d, 1)

    def vjp(ct):
        return (kernels.sepcorr_vjp(kernels.sepcorr_vjp(ct, k1d, 1), k1d, 0),)

    return x.tape._emit(y, (x,), vjp)


def _warp_coords(rotation_deg: float, crop_scale: float,
                 in_h: int, in_w: int, out_h: int, out_w: int):
    """Inverse-map output pixel centers to input sample coordinates.

    The output shows the input rotated about its center, center-cropped to a
    `crop_scale` fraction and resampled to (out_h, out_w).
    """
    theta = math.radians(rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    r = (np.arange(out_h, dtype=np.float64) + 0.5) / out_h - 0.5
    c = (np.arange(out_w, dtype=np.float64) + 0.5) / out_w - 0.5
    u = (r * (crop_scale * in_h))[:, None]
    v = (c * (crop_scale * in_w))[None, :]
    # rotate by -theta (inverse of the displayed rotation)
    sy = cos_t * u + sin_t * v + (in_h / 2.0 - 0.5)
    sx = -sin_t * u + cos_t * v + (in_w / 2.0 - 0.5)
    return np.ascontiguousarray(sy), np.ascontiguousarray(sx)


def affine_warp(x: Tensor, rotation_deg: float, crop_scale: float,
                out_h: int, out_w: int) -> Tensor:
    """Rotation + center crop via inverse-mapped bilinear sampling (clamped)."""
    if not (0.0 < crop_scale <= 1.0):
        raise ParameterError("crop_scale must be in (0, 1]")
    if out_h < 1 or out_w < 1:
        raise ParameterError("output extents must be >= 1")
    if x.value.ndim != 3:
        raise DimensionError("affine_warp expects (H, W, C)")
    h, w, ch = x.value.shape
    sy, sx = _warp_coords(rotation_deg, crop_scale, h, w, out_h, out_w)
    y = kernels.warp_forward(x.value, sy, sx)

    def vjp(ct):
        return (kernels.warp_vjp(ct, sy, sx, h, w, ch),)

    return x.tape._emit(y, (x,), vjp)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def scalar_fn(builder: Callable[[Tensor], Tensor]) -> Callable:
    """Wrap a tape-builder into a `point -> (value, grad)` callable."""

    def fn(point: np.ndarray):
        tape = Tape()
        x = tape.leaf(point)
        out = builder(x)
        grads = tape.backward({out: 1.0})
        return float(out.value), grads.get(x, np.zeros_like(x.value))

    return fn


def grad_check(fn: Callable, point: np.ndarray, step: float = 1e-5,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Worst relative error between analytic gradient and central differences.

    `fn(point) -> (value, grad)`.  Relative error uses denominator
    max(|analytic|, |numeric|, 1e-12).  With `max_coords`, a seeded subset of
    coordinates is checked instead of all of them.
    """
    if step <= 0:
        raise ParameterError("step must be > 0")
    point = np.array(point, dtype=np.float64)  # owned copy: ravel() below is a view
    value, grad = fn(point)
    if not math.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite function value or gradient")
    flat = point.ravel()
    idx = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        idx = np.random.default_rng(seed).choice(flat.size, size=max_coords, replace=False)
        idx.sort()
    gflat = np.asarray(grad).ravel()
    worst = 0.0
    for i in idx:
        saved = flat[i]
        flat[i] = saved + step
        f_hi, _ = fn(point)
        flat[i] = saved - step
        f_lo, _ = fn(point)
        flat[i] = saved
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise NumericError("non-finite function value during differencing")
        numeric = (f_hi - f_lo) / (2.0 * step)
        denom = max(abs(gflat[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
