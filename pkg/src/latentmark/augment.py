"""Differentiable transform pool for expectation-over-transformation embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad
from .errors import ParameterError

KINDS = ("identity", "rotation", "crop", "blur")


@dataclass(frozen=True)
class TransformSpec:
    """One transform family and its parameter range."""

    kind: str
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown transform kind: {self.kind!r}")
        if self.kind != "identity":
            if self.hi < self.lo:
                raise ParameterError("empty parameter range")
            if self.kind == "crop" and not (0.0 < self.lo and self.hi <= 1.0):
                raise ParameterError("crop scale range must lie in (0, 1]")
            if self.kind == "blur" and self.lo < 0.0:
                raise ParameterError("blur sigma must be >= 0")


@dataclass(frozen=True)
class TransformDraw:
    kind: str
    param: float = 0.0


def default_specs() -> list[TransformSpec]:
    return [
        TransformSpec("identity"),
        TransformSpec("rotation", -10.0, 10.0),
        TransformSpec("crop", 0.7, 1.0),
        TransformSpec("blur", 0.5, 2.0),
    ]


def sample_transform(specs: list[TransformSpec], rng: np.random.Generator) -> TransformDraw:
    """Uniform choice of kind, then uniform parameters within its range."""
    if not specs:
        raise ParameterError("transform spec list is empty")
    spec = specs[int(rng.integers(len(specs)))]
    if spec.kind == "identity":
        return TransformDraw("identity")
    return TransformDraw(spec.kind, float(rng.uniform(spec.lo, spec.hi)))


def apply_transform(x: ndgrad.Tensor, t: TransformDraw) -> ndgrad.Tensor:
    """Apply a draw on the tape so gradients flow through the transform."""
    h, w, _ = x.value.shape
    if t.kind == "identity":
        return x
    if t.kind == "rotation":
        return ndgrad.affine_warp(x, t.param, 1.0, h, w)
    if t.kind == "crop":
        return ndgrad.affine_warp(x, 0.0, t.param, h, w)
    if t.kind == "blur":
        return ndgrad.gaussian_blur(x, t.param)
    raise ParameterError(f"unknown transform kind: {t.kind!r}")
