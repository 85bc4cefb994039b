"""Latent-space image watermarking lab.

Embeds zero-bit and multi-bit watermarks by adversarial optimization in a
feature extractor's latent space, mounts copy and removal attacks against
them, and measures detection/decoding degradation per attack distortion.
"""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
