"""Composes image-domain fidelity, optional transforms and a latent-space
loss into a single `x -> (value, grad)` objective for the Adam loop.

The latent term is supplied in value-and-gradient form so the composition
works identically for in-process and remote (black-box VJP) extractors.
"""

from __future__ import annotations

import numpy as np

from . import ndgrad
from .augment import TransformSpec, apply_transform, sample_transform
from .features import FeatureExtractor


def composite_objective(ref: np.ndarray, extractor: FeatureExtractor,
                        latent_term, lam: float,
                        transform_specs: list[TransformSpec] | None = None,
                        rng: np.random.Generator | None = None):
    """Objective  latent+fidelity:  lam * term(f(t(x))) + mse(x, ref).

    `latent_term(z) -> (value, grad_z)`.  With `transform_specs`, one
    transform is drawn per evaluation (stochastic expectation over
    transformations) and the gradient flows through it.
    """
    ref = np.asarray(ref, dtype=np.float64)
    inv_n = 1.0 / ref.size

    def objective(x: np.ndarray):
        delta = x - ref
        fid = float(np.mean(delta * delta))
        grad = (2.0 * inv_n) * delta
        if lam == 0.0:
            return fid, grad
        if transform_specs:
            draw = sample_transform(transform_specs, rng)
            tape = ndgrad.Tape()
            xv = tape.leaf(x)
            yv = apply_transform(xv, draw)
            z, vjp = extractor.forward_with_vjp(yv.value)
            value, gz = latent_term(z)
            gx = tape.backward({yv: vjp(gz)}).get(xv)
            if gx is not None:
                grad = grad + lam * gx
        else:
            z, vjp = extractor.forward_with_vjp(x)
            value, gz = latent_term(z)
            grad = grad + lam * vjp(gz)
        return fid + lam * value, grad

    return objective
