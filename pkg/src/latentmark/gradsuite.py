"""Gradient integrity suite: finite-difference checks for every kernel,
both built-in extractors, and the four embed/attack objectives.

Each entry reports the worst relative error over a seeded set of probe
coordinates.  ReLU kinks are avoided by probing at images whose
preactivation margins exceed the differencing step by a wide factor
(the hinge objective is probed with a margin that keeps every slack
strictly positive).
"""

from __future__ import annotations

import numpy as np

from . import attacks, augment, kernels, ndgrad, wmcodec
from .features import make_convnet_extractor, make_linear_extractor
from .objectives import composite_objective

KERNEL_TOL = 1e-5


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _probe_image(rng: np.random.Generator, h: int, w: int, c: int = 3) -> np.ndarray:
    return rng.uniform(40.0, 215.0, size=(h, w, c))


def _extractor_fn(extractor, probe_vec):
    def fn(x):
        z, vjp = extractor.forward_with_vjp(x)
        return float(z @ probe_vec), vjp(probe_vec)
    return fn


def _convnet_margin(extractor, image: np.ndarray) -> float:
    """Smallest |preactivation| feeding a relu; probes must stay clear of it."""
    s, p = extractor.STRIDE, extractor.PADDING
    x = image / 255.0
    k1d = ndgrad.gaussian_kernel_1d(extractor.hp_sigma)
    hp = x - kernels.sepcorr(kernels.sepcorr(x, k1d, 0), k1d, 1)
    h1 = kernels.conv2d_forward(hp, extractor.weights[0], s, p)
    m = np.min(np.abs(h1))
    h2 = kernels.conv2d_forward(np.maximum(h1, 0.0), extractor.weights[1], s, p)
    return float(min(m, np.min(np.abs(h2))))


def _nudged_image(extractor, rng, h: int, w: int, step: float,
                  transform: augment.TransformDraw | None = None) -> np.ndarray:
    """Draw probe images until the (optionally transformed) probe sits far
    from every relu kink.  A unit pixel step moves a preactivation by at
    most ~6e-4 (the /255 normalization times the kernel mass), so a margin
    of 0.01*step still leaves >15x headroom against a differencing step
    flipping any gate."""
    for _ in range(64):
        img = _probe_image(rng, h, w)
        checked = img
        if transform is not None:
            checked = augment.apply_transform(ndgrad.Tape().leaf(img), transform).value
        if _convnet_margin(extractor, checked) > 0.01 * step:
            return img
    raise RuntimeError("could not find a kink-free probe image")


def run_suite(step: float = 1e-5, image_step: float = 1e-3,
              max_coords: int = 96) -> list[tuple[str, float]]:
    """Returns [(check name, worst relative error), ...].

    `step` differentiates the unit-scale kernel checks; `image_step` the
    checks probed with [0,255]-scale images, where the larger step trims
    floating-point cancellation and costs no truncation error (the probed
    functions are piecewise linear or quadratic in the image).
    """
    results = []
    rng = _rng(2024)

    # --- raw kernels on the tape ---
    x = rng.standard_normal((6, 6, 2))
    k = rng.standard_normal((3, 3, 2, 4)) * 0.5
    results.append(("conv2d_s1", ndgrad.grad_check(
        ndgrad.scalar_fn(lambda v: ndgrad.ssum(ndgrad.square(
            ndgrad.conv2d(v, k, stride=1, padding=1)))), x, step)))
    results.append(("conv2d_s2", ndgrad.grad_check(
        ndgrad.scalar_fn(lambda v: ndgrad.ssum(ndgrad.square(
            ndgrad.conv2d(v, k, stride=2, padding=1)))), x, step)))
    kv = rng.standard_normal((3, 3, 2, 3)) * 0.5

    def kernel_side(kpoint):
        tape = ndgrad.Tape()
        xc = tape.leaf(x)
        kvar = tape.leaf(kpoint)
        out = ndgrad.ssum(ndgrad.square(ndgrad.conv2d(xc, kvar, stride=1, padding=0)))
        return float(out.value), tape.backward({out: 1.0})[kvar]

    results.append(("conv2d_kernel_grad", ndgrad.grad_check(kernel_side, kv, step)))

    y = rng.standard_normal((8, 8, 3))
    results.append(("gaussian_blur", ndgrad.grad_check(
        ndgrad.scalar_fn(lambda v: ndgrad.ssum(ndgrad.square(
            ndgrad.gaussian_blur(v, 1.2)))), y, step)))
    results.append(("affine_warp", ndgrad.grad_check(
        ndgrad.scalar_fn(lambda v: ndgrad.ssum(ndgrad.square(
            ndgrad.affine_warp(v, 17.0, 0.85, 7, 9)))), y, step)))
    probe = rng.standard_normal(3)
    yr = rng.standard_normal((8, 8, 3))
    yr = yr + 0.25 * np.where(yr >= 0, 1.0, -1.0)  # keep values off the relu kink
    results.append(("pool_relu_linear", ndgrad.grad_check(
        ndgrad.scalar_fn(lambda v: ndgrad.dot(
            ndgrad.global_avg_pool(ndgrad.relu(v)), v.tape.leaf(probe))), yr, step)))

    # --- extractors ---
    lin = make_linear_extractor(7, 12, 16, 16)
    img = _probe_image(rng, 16, 16)
    results.append(("linear_extractor", ndgrad.grad_check(
        _extractor_fn(lin, rng.standard_normal(12)), img, image_step,
        max_coords=max_coords, seed=11)))
    conv = make_convnet_extractor(5, 16)
    cimg = _nudged_image(conv, rng, 16, 16, image_step)
    results.append(("convnet_extractor", ndgrad.grad_check(
        _extractor_fn(conv, rng.standard_normal(16)), cimg, image_step,
        max_coords=max_coords, seed=12)))

    # --- embed/attack objectives (fixed transform draws keep FD meaningful) ---
    key = wmcodec.SecretKey(99)
    det = wmcodec.ConeDetector.from_key(key, 16, 1e-3)
    ref = _probe_image(rng, 16, 16)
    rot = augment.TransformDraw("rotation", 6.0)
    point = _nudged_image(conv, rng, 16, 16, image_step, transform=rot)
    obj = composite_objective(
        ref, conv, lambda z: wmcodec.loss_zero_bit_grad(z, det),
        lam=2.0, transform_specs=[augment.TransformSpec("rotation", 6.0, 6.0)],
        rng=_rng(1))
    results.append(("objective_embed_zero_bit", ndgrad.grad_check(
        obj, point, image_step, max_coords=max_coords, seed=13)))

    msg = wmcodec.Message.random(_rng(3), 8)
    carriers = wmcodec.generate_carriers(key, 8, 16)
    blur = augment.TransformDraw("blur", 1.0)
    point = _nudged_image(conv, rng, 16, 16, image_step, transform=blur)
    obj = composite_objective(
        ref, conv,
        lambda z: wmcodec.loss_multibit_grad(z, msg, carriers, mu=10.0),
        lam=2.0, transform_specs=[augment.TransformSpec("blur", 1.0, 1.0)],
        rng=_rng(2))
    results.append(("objective_embed_multibit", ndgrad.grad_check(
        obj, point, image_step, max_coords=max_coords, seed=14)))

    zw = conv.forward(_probe_image(rng, 16, 16))
    point = _nudged_image(conv, rng, 16, 16, image_step)
    obj = composite_objective(
        ref, conv, lambda z: attacks.cosine_align_grad(z, zw), lam=2.0)
    results.append(("objective_copy", ndgrad.grad_check(
        obj, point, image_step, max_coords=max_coords, seed=15)))

    def neg_decor(z):
        v, g = attacks.decorrelate_grad(z, zw)
        return -v, -g

    obj = composite_objective(ref, conv, neg_decor, lam=2.0)
    point = _nudged_image(conv, rng, 16, 16, image_step)
    results.append(("objective_removal_untargeted", ndgrad.grad_check(
        obj, point, image_step, max_coords=max_coords, seed=16)))
    return results


def worst_error(results: list[tuple[str, float]]) -> float:
    return max(err for _, err in results)
