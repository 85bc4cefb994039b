"""Keys, carriers, hypercone detection and multi-bit decoding.

A secret key seeds an orthonormal family of latent-space carriers.  Zero-bit
detection tests membership of a latent in the dual hypercone around the
single carrier; the cone angle is calibrated to a target false-acceptance
probability through the regularized incomplete beta function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

# ---------------------------------------------------------------------------
# keys, messages, carriers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecretKey:
    seed: int

    def __post_init__(self):
        if not (0 <= self.seed < 2 ** 64):
            raise ParameterError("key seed must fit in uint64")


@dataclass(frozen=True)
class Message:
    """Payload bits over {-1, +1}."""

    bits: tuple

    def __post_init__(self):
        if len(self.bits) < 1 or any(b not in (-1, 1) for b in self.bits):
            raise ParameterError("message bits must be a nonempty vector over {-1, +1}")

    def __len__(self):
        return len(self.bits)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)

    @staticmethod
    def random(rng: np.random.Generator, length: int) -> "Message":
        return Message(tuple(int(b) for b in rng.choice([-1, 1], size=length)))


@dataclass(frozen=True)
class CarrierSet:
    """Orthonormal unit vectors in latent space, derived from a key."""

    carriers: np.ndarray  # (count, d)
    key: SecretKey

    @property
    def count(self) -> int:
        return self.carriers.shape[0]

    @property
    def dim(self) -> int:
        return self.carriers.shape[1]


def generate_carriers(key: SecretKey, count: int, d: int) -> CarrierSet:
    """Seeded Gaussian vectors orthonormalized by modified Gram-Schmidt."""
    if not (1 <= count <= d):
        raise ParameterError(f"carrier count must be in [1, {d}], got {count}")
    rng = np.random.Generator(np.random.PCG64(key.seed))
    v = rng.standard_normal((count, d))
    for _ in range(2):  # second pass cleans up residual non-orthogonality
        for i in range(count):
            for j in range(i):
                v[i] -= (v[i] @ v[j]) * v[j]
            v[i] /= np.linalg.norm(v[i])
    return CarrierSet(carriers=v, key=key)


# ---------------------------------------------------------------------------
# regularized incomplete beta (Lentz continued fraction)
# ---------------------------------------------------------------------------

_TINY = 1e-300
_CF_EPS = 1e-14
_CF_MAX_ITER = 500


def _betacf(x: float, a: float, b: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz method."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    return h


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) to absolute accuracy ~1e-14 across the domain."""
    if not (0.0 <= x <= 1.0):
        raise ParameterError(f"x must be in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise ParameterError("a and b must be > 0")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # symmetry switch keeps the continued fraction in its fast-converging zone
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


# ---------------------------------------------------------------------------
# hypercone detector
# ---------------------------------------------------------------------------

def pfa_from_angle(gamma: float, d: int) -> float:
    """False-acceptance probability of the dual hypercone with half-angle gamma."""
    if not (0.0 <= gamma <= math.pi / 2):
        raise ParameterError("gamma must be in [0, pi/2]")
    if d < 2:
        raise ParameterError("latent dimension must be >= 2")
    c = math.cos(gamma)
    return 1.0 - regularized_incomplete_beta(c * c, 0.5, (d - 1) / 2.0)


def angle_from_pfa(target_pfa: float, d: int) -> float:
    """Invert pfa_from_angle by bisection; P_fa is monotone increasing in gamma."""
    if not (0.0 < target_pfa < 1.0):
        raise ParameterError("target_pfa must be in (0, 1)")
    if d < 2:
        raise ParameterError("latent dimension must be >= 2")
    lo, hi = 0.0, math.pi / 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p = pfa_from_angle(mid, d)
        if abs(p - target_pfa) <= 1e-12:
            return mid
        if p < target_pfa:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ConeDetector:
    """Dual hypercone acceptance region around a unit carrier."""

    carrier: np.ndarray
    gamma: float
    dim: int
    target_pfa: float

    @staticmethod
    def from_key(key: SecretKey, d: int, target_pfa: float) -> "ConeDetector":
        carrier = generate_carriers(key, 1, d).carriers[0]
        gamma = angle_from_pfa(target_pfa, d)
        return ConeDetector(carrier=carrier, gamma=gamma, dim=d, target_pfa=target_pfa)


def detect_zero_bit(z: np.ndarray, det: ConeDetector) -> bool:
    """True iff |z.w| > ||z|| cos(gamma); the absolute value makes the cone dual."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (det.dim,):
        raise DimensionError(f"latent dim {z.shape} does not match detector dim {det.dim}")
    nz = np.linalg.norm(z)
    if nz == 0.0:
        raise ParameterError("zero latent has no direction; detection undefined")
    return bool(abs(z @ det.carrier) > nz * math.cos(det.gamma))


def loss_zero_bit(z: np.ndarray, det: ConeDetector) -> float:
    """||z||^2 cos^2(gamma) - (z.w)^2; negative exactly when z is inside the cone."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (det.dim,):
        raise DimensionError(f"latent dim {z.shape} does not match detector dim {det.dim}")
    c = math.cos(det.gamma)
    return float((z @ z) * c * c - (z @ det.carrier) ** 2)


def loss_zero_bit_grad(z: np.ndarray, det: ConeDetector):
    """Value and gradient of loss_zero_bit with respect to z."""
    z = np.asarray(z, dtype=np.float64)
    c2 = math.cos(det.gamma) ** 2
    proj = float(z @ det.carrier)
    value = float((z @ z) * c2 - proj * proj)
    grad = 2.0 * c2 * z - 2.0 * proj * det.carrier
    return value, grad


def decode_multibit(z: np.ndarray, carriers: CarrierSet) -> Message:
    """Bits are the signs of the carrier projections; sign(0) decodes as +1."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (carriers.dim,):
        raise DimensionError(f"latent dim {z.shape} does not match carriers dim {carriers.dim}")
    proj = carriers.carriers @ z
    return Message(tuple(1 if p >= 0 else -1 for p in proj))


def loss_multibit(z: np.ndarray, m: Message, carriers: CarrierSet, mu: float) -> float:
    """Mean hinge over carriers: (1/l) sum max(0, mu - (z.w_i) m_i)."""
    value, _ = loss_multibit_grad(z, m, carriers, mu)
    return value


def loss_multibit_grad(z: np.ndarray, m: Message, carriers: CarrierSet, mu: float):
    if mu < 0:
        raise ParameterError("margin mu must be >= 0")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (carriers.dim,):
        raise DimensionError(f"latent dim {z.shape} does not match carriers dim {carriers.dim}")
    if len(m) != carriers.count:
        raise DimensionError(f"message length {len(m)} != carrier count {carriers.count}")
    bits = m.as_array()
    proj = carriers.carriers @ z
    slack = mu - proj * bits
    active = slack > 0.0  # hinge subgradient at the kink is 0
    value = float(np.where(active, slack, 0.0).mean())
    grad = -(bits * active) @ carriers.carriers / len(m)
    return value, grad


def bit_error_rate(m: Message, m_hat: Message) -> float:
    if len(m) != len(m_hat):
        raise DimensionError(f"message lengths differ: {len(m)} vs {len(m_hat)}")
    return sum(a != b for a, b in zip(m.bits, m_hat.bits)) / len(m)
