"""Image-domain distortion accounting and the admissible-perturbation set.

Images are float64 (H, W, C) rasters in [0, 255].  The constraint projection
applies perceptual attenuation to a pixel difference and then rescales it to
a PSNR budget, either exactly (embedding) or as a cap (attacks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, ParameterError
from .ndgrad import gaussian_kernel_1d

PEAK = 255.0
ATTENUATION_FLOOR = 0.1
_SSIM_SIGMA = 1.5  # 11-tap Gaussian window
_C1 = (0.01 * PEAK) ** 2
_C2 = (0.03 * PEAK) ** 2


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(255^2 / MSE); math.inf when the images are identical."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / m)


def psnr_to_mse(target_db: float) -> float:
    return PEAK * PEAK / (10.0 ** (target_db / 10.0))


def _window_mean(x: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    return kernels.sepcorr(kernels.sepcorr(x, k1d, 0), k1d, 1)


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM with an 11x11 Gaussian window, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ParameterError("image smaller than the 11x11 SSIM window")
    k1d = gaussian_kernel_1d(_SSIM_SIGMA)
    mu_a = _window_mean(a, k1d)
    mu_b = _window_mean(b, k1d)
    var_a = _window_mean(a * a, k1d) - mu_a * mu_a
    var_b = _window_mean(b * b, k1d) - mu_b * mu_b
    cov = _window_mean(a * b, k1d) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _C1) * (2.0 * cov + _C2)
    den = (mu_a * mu_a + mu_b * mu_b + _C1) * (var_a + var_b + _C2)
    return (num / den).mean(axis=2)


def attenuation_map(x0: np.ndarray) -> np.ndarray:
    """Texture-masking weights in [0.1, 1]: local std under the SSIM window,
    normalized by its maximum.  Flat images get the uniform floor map."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] < 11 or x0.shape[1] < 11:
        raise ParameterError("image smaller than the 11x11 window")
    k1d = gaussian_kernel_1d(_SSIM_SIGMA)
    mu = _window_mean(x0, k1d)
    var = _window_mean(x0 * x0, k1d) - mu * mu
    std = np.sqrt(np.maximum(var, 0.0)).mean(axis=2)
    peak = std.max()
    if peak == 0.0:
        return np.full(std.shape, ATTENUATION_FLOOR)
    return np.maximum(std / peak, ATTENUATION_FLOOR)


@dataclass(frozen=True)
class ConstraintSpec:
    """PSNR budget for a pixel difference.

    mode "exact": rescale the difference (up or down) to hit target_psnr.
    mode "cap": scale down only when the current PSNR is below target.
    """

    target_psnr: float
    mode: str = "exact"
    attenuation: bool = True

    def __post_init__(self):
        if self.mode not in ("exact", "cap"):
            raise ParameterError(f"unknown constraint mode: {self.mode!r}")
        if not (20.0 <= self.target_psnr <= 60.0):
            raise ParameterError("target_psnr must be within [20, 60] dB")


def project_constraints(x: np.ndarray, ref: np.ndarray, spec: ConstraintSpec,
                        attn: np.ndarray | None = None) -> np.ndarray:
    """Project x onto the admissible set around ref.

    The difference is attenuated (optional), rescaled to the PSNR budget and
    the result clamped to [0, 255].  `attn` lets callers reuse a precomputed
    attenuation_map(ref).  Output is not quantized.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_pair(x, ref)
    delta = x - ref
    if not np.any(delta):
        return ref.copy()
    if spec.attenuation:
        if attn is None:
            attn = attenuation_map(ref)
        delta = delta * attn[:, :, None]
    cur_mse = float(np.mean(delta * delta))
    target_mse = psnr_to_mse(spec.target_psnr)
    if spec.mode == "cap":
        if cur_mse > target_mse:  # current PSNR below target: tame the distortion
            delta = delta * math.sqrt(target_mse / cur_mse)
        return np.clip(ref + delta, 0.0, PEAK)
    # exact mode: clamping can eat distortion, so re-solve the scale if needed
    s = math.sqrt(target_mse / cur_mse)
    out = np.clip(ref + s * delta, 0.0, PEAK)
    achieved = psnr(ref, out)
    if abs(achieved - spec.target_psnr) <= 0.01:
        return out
    lo, hi = s, s
    for _ in range(40):
        hi *= 2.0
        if psnr(ref, np.clip(ref + hi * delta, 0.0, PEAK)) < spec.target_psnr:
            break
    else:
        # clamping saturated the reachable distortion; return the closest point
        return np.clip(ref + hi * delta, 0.0, PEAK)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        out = np.clip(ref + mid * delta, 0.0, PEAK)
        achieved = psnr(ref, out)
        if abs(achieved - spec.target_psnr) <= 0.01:
            return out
        if achieved > spec.target_psnr:
            lo = mid
        else:
            hi = mid
    return out


def quantize(x: np.ndarray) -> np.ndarray:
    """Round half away from zero, clamp to [0, 255]."""
    x = np.asarray(x, dtype=np.float64)
    rounded = np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5))
    return np.clip(rounded, 0.0, PEAK)


def wiener_denoise(x: np.ndarray, window: int) -> np.ndarray:
    """Local-adaptive Wiener filter (uniform box stats, clamp-to-edge borders).

    Noise power is the image-wide mean of the local variance, per channel.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError("window must be odd and >= 3")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError("expected an (H, W, C) image")
    # plain box sums with one final division keep integer-valued constants exact
    box = np.ones(window)
    taps = float(window * window)
    mu = _window_mean(x, box) / taps
    var = np.maximum(_window_mean(x * x, box) / taps - mu * mu, 0.0)
    noise = var.mean(axis=(0, 1), keepdims=True)
    gain = np.maximum(var - noise, 0.0) / np.maximum(var, 1e-12)
    return mu + gain * (x - mu)
