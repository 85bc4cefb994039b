"""Copy and removal attacks on latent-space watermarks.

Attacks know the feature extractor (white box) but never the key, message,
carriers or detector; this module must not import the codec.  Each attack
runs the shared constrained Adam loop under a cap-mode PSNR budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .features import FeatureExtractor
from .objectives import composite_objective
from .optim import IterationPlan, optimize_image
from .percept import ConstraintSpec, wiener_denoise

DEFAULT_PSNR_A = 35.0
STRATEGIES = ("other_image", "wiener_denoised", "random_carrier")

# Calibrated like the embedding defaults; attacks need larger steps since
# the cap-mode projection never amplifies the accumulated perturbation.
ATTACK_LAMBDA = 1e4
ATTACK_ETA = 1.0


@dataclass(frozen=True)
class AttackConfig:
    plan: IterationPlan = field(default_factory=lambda: IterationPlan(
        constraints=ConstraintSpec(DEFAULT_PSNR_A, mode="cap", attenuation=False),
        lam=ATTACK_LAMBDA, eta=ATTACK_ETA))
    # alternative normalization for the untargeted loss: divide by the full
    # squared-norm product (a cosine^2) instead of its square root
    decorrelate_full_norm: bool = False

    def __post_init__(self):
        if self.plan.constraints.mode != "cap":
            raise ParameterError("attacks require cap-mode constraints")


@dataclass(frozen=True)
class TargetStrategy:
    kind: str
    wiener_window: int = 25

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ParameterError(f"unknown target strategy: {self.kind!r}")


# ---------------------------------------------------------------------------
# latent alignment losses
# ---------------------------------------------------------------------------

def _check_nonzero(v: np.ndarray, name: str) -> float:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ParameterError(f"{name} latent is the zero vector")
    return n


def cosine_align_loss(za: np.ndarray, zt: np.ndarray) -> float:
    """Negative cosine similarity; -1 exactly when collinear, same direction."""
    value, _ = cosine_align_grad(za, zt)
    return value


def cosine_align_grad(za: np.ndarray, zt: np.ndarray):
    za = np.asarray(za, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    if za.shape != zt.shape:
        raise DimensionError(f"latent shapes differ: {za.shape} vs {zt.shape}")
    na = _check_nonzero(za, "first")
    nt = _check_nonzero(zt, "second")
    if np.array_equal(za, zt):
        # exact optimum: the analytic gradient is zero, while the general
        # formula below leaves cancellation dust that a normalizing
        # optimizer would amplify into a spurious random walk
        return -1.0, np.zeros_like(za)
    ip = float(za @ zt)
    value = -ip / (na * nt)
    grad = -zt / (na * nt) + ip * za / (na ** 3 * nt)
    return value, grad


def decorrelate_loss(za: np.ndarray, zw: np.ndarray,
                     full_norm: bool = False) -> float:
    """(za.zw)^2 / sqrt(|za|^2 |zw|^2); zero exactly when orthogonal.

    With `full_norm`, the denominator is the full squared-norm product,
    making the loss the squared cosine.
    """
    value, _ = decorrelate_grad(za, zw, full_norm=full_norm)
    return value


def decorrelate_grad(za: np.ndarray, zw: np.ndarray, full_norm: bool = False):
    za = np.asarray(za, dtype=np.float64)
    zw = np.asarray(zw, dtype=np.float64)
    if za.shape != zw.shape:
        raise DimensionError(f"latent shapes differ: {za.shape} vs {zw.shape}")
    na = _check_nonzero(za, "first")
    nw = _check_nonzero(zw, "second")
    ip = float(za @ zw)
    if full_norm:
        value = ip * ip / (na * na * nw * nw)
        grad = 2.0 * ip * zw / (na * na * nw * nw) - 2.0 * value * za / (na * na)
    else:
        value = ip * ip / (na * nw)
        grad = 2.0 * ip * zw / (na * nw) - value * za / (na * na)
    return value, grad


# ---------------------------------------------------------------------------
# attacks (no key, no message, no detector)
# ---------------------------------------------------------------------------

def copy_attack(xw: np.ndarray, xt: np.ndarray, extractor: FeatureExtractor,
                cfg: AttackConfig | None = None) -> np.ndarray:
    """Transfer the watermark's latent signature onto a clean target image."""
    return copy_attack_multi([xw], xt, extractor, cfg)


def copy_attack_multi(sources: list[np.ndarray], xt: np.ndarray,
                      extractor: FeatureExtractor,
                      cfg: AttackConfig | None = None) -> np.ndarray:
    """Copy attack averaging the alignment loss over several watermarked
    sources (all marked with the same key/message)."""
    cfg = cfg or AttackConfig()
    if not sources:
        raise ParameterError("copy attack needs at least one watermarked source")
    xt = np.asarray(xt, dtype=np.float64)
    for s in sources:
        if np.shape(s) != xt.shape:
            raise DimensionError("source and target image shapes must match")
    zws = [extractor.forward(np.asarray(s, dtype=np.float64)) for s in sources]

    def latent_term(z):
        value = 0.0
        grad = np.zeros_like(z)
        for zw in zws:
            v, g = cosine_align_grad(z, zw)
            value += v
            grad += g
        n = len(zws)
        return value / n, grad / n

    objective = composite_objective(xt, extractor, latent_term, cfg.plan.lam)
    return optimize_image(xt, xt, objective, cfg.plan)


def removal_untargeted(xw: np.ndarray, extractor: FeatureExtractor,
                       cfg: AttackConfig | None = None) -> np.ndarray:
    """Push the latent toward orthogonality with the watermarked latent.

    The correlation measure is minimized alongside the fidelity term; its
    zero set (all latents orthogonal to the watermarked one) is the attack's
    optimum, which is what makes the untargeted variant non-unique."""
    cfg = cfg or AttackConfig()
    xw = np.asarray(xw, dtype=np.float64)
    zw = extractor.forward(xw)

    def latent_term(z):
        return decorrelate_grad(z, zw, full_norm=cfg.decorrelate_full_norm)

    objective = composite_objective(xw, extractor, latent_term, cfg.plan.lam)
    return optimize_image(xw, xw, objective, cfg.plan)


def removal_targeted(xw: np.ndarray, target, extractor: FeatureExtractor,
                     cfg: AttackConfig | None = None) -> np.ndarray:
    """Pull the latent toward a chosen target: an image's latent or a raw
    latent-space vector."""
    cfg = cfg or AttackConfig()
    xw = np.asarray(xw, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1:
        if target.shape != (extractor.latent_dim,):
            raise DimensionError(
                f"target latent dim {target.shape} != ({extractor.latent_dim},)")
        zt = target
    else:
        zt = extractor.forward(target)

    def latent_term(z):
        return cosine_align_grad(z, zt)

    objective = composite_objective(xw, extractor, latent_term, cfg.plan.lam)
    return optimize_image(xw, xw, objective, cfg.plan)


def select_target(strategy: TargetStrategy, xw: np.ndarray, corpus,
                  extractor: FeatureExtractor, rng: np.random.Generator):
    """Pick the removal-attack target per strategy: another corpus image, a
    Wiener-denoised copy of the marked image, or a random latent direction
    scaled to the marked image's latent norm."""
    xw = np.asarray(xw, dtype=np.float64)
    if strategy.kind == "wiener_denoised":
        return wiener_denoise(xw, strategy.wiener_window)
    if strategy.kind == "random_carrier":
        v = rng.standard_normal(extractor.latent_dim)
        v /= np.linalg.norm(v)
        return v * float(np.linalg.norm(extractor.forward(xw)))
    candidates = [img for img in corpus if not np.array_equal(img, xw)]
    if not candidates:
        raise ParameterError("corpus holds no image different from the input")
    return np.asarray(candidates[int(rng.integers(len(candidates)))], dtype=np.float64)
