"""Feature extractors: image -> latent vector, with input gradients.

Extractors normalize pixel values to [0, 1] internally (divide by 255)
before the first layer.  Built-in extractors are immutable after
construction and deterministic in their seed; the remote extractor
delegates to a feature server over the FMV1 protocol.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess

import numpy as np

from . import fmv1, ndgrad
from .errors import DimensionError, ParameterError, RemoteError

_GRAY = np.array([0.299, 0.587, 0.114])


class FeatureExtractor:
    """Contract: a latent dimension, a deterministic forward, and its VJP."""

    latent_dim: int

    def forward(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def input_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def forward_with_vjp(self, image: np.ndarray):
        """(latent, vjp_fn).  Subclasses may share work between the two."""
        z = self.forward(image)
        return z, lambda g: self.input_vjp(image, g)

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3:
            raise DimensionError("extractors expect an (H, W, C) image")
        return image

    def _check_cotangent(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (self.latent_dim,):
            raise DimensionError(f"cotangent shape {g.shape} != ({self.latent_dim},)")
        return g


class LinearExtractor(FeatureExtractor):
    """grayscale -> 4x4 average downsample -> flatten -> orthonormal row map."""

    def __init__(self, seed: int, d: int, in_h: int, in_w: int):
        if in_h % 4 or in_w % 4:
            raise ParameterError("input extents must be multiples of 4")
        n = (in_h // 4) * (in_w // 4)
        if d > n:
            raise ParameterError(f"latent dim {d} exceeds downsampled size {n}")
        rng = np.random.Generator(np.random.PCG64(seed))
        q, r = np.linalg.qr(rng.standard_normal((n, d)))
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        self.matrix = (q * signs).T  # (d, n), orthonormal rows
        self.latent_dim = d
        self.in_h = in_h
        self.in_w = in_w

    def _downsample(self, image: np.ndarray) -> np.ndarray:
        gray = image @ _GRAY if image.shape[2] == 3 else image[:, :, 0]
        h, w = gray.shape
        return gray.reshape(h // 4, 4, w // 4, 4).mean(axis=(1, 3))

    def forward(self, image: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        if image.shape[:2] != (self.in_h, self.in_w):
            raise DimensionError(f"expected {(self.in_h, self.in_w)} spatial extents")
        return self.matrix @ self._downsample(image / 255.0).ravel()

    def input_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        g = self._check_cotangent(cotangent)
        flat = self.matrix.T @ g
        small = flat.reshape(self.in_h // 4, self.in_w // 4)
        up = np.repeat(np.repeat(small, 4, axis=0), 4, axis=1) / 16.0
        if image.shape[2] == 3:
            out = up[:, :, None] * _GRAY[None, None, :]
        else:
            out = up[:, :, None]
        return out / 255.0


class ConvnetExtractor(FeatureExtractor):
    """High-pass input stage, then three stride-2 3x3 conv layers
    (3 -> 16 -> 32 -> d, relu between) and global average pooling.
    Seeded Gaussian weights, fixed forever.

    The high-pass stage (x minus a Gaussian-blurred copy) removes the
    brightness response that otherwise dominates random-weight features:
    without it every image maps to nearly the same latent direction and the
    latent space is useless as a watermarking host."""

    CHANNELS = (3, 16, 32)
    STRIDE = 2
    PADDING = 1
    HP_SIGMA = 0.5

    def __init__(self, seed: int, d: int, weights: list[np.ndarray] | None = None,
                 hp_sigma: float | None = None):
        if not (16 <= d <= 1024):
            raise ParameterError("latent dim must be within [16, 1024]")
        self.latent_dim = d
        self.seed = seed
        self.hp_sigma = float(self.HP_SIGMA if hp_sigma is None else hp_sigma)
        if weights is None:
            rng = np.random.Generator(np.random.PCG64(seed))
            chans = list(self.CHANNELS) + [d]
            weights = []
            for cin, cout in zip(chans[:-1], chans[1:]):
                fan_in = 3 * 3 * cin
                weights.append(rng.standard_normal((3, 3, cin, cout)) / np.sqrt(fan_in))
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]

    def _build(self, tape: ndgrad.Tape, image: np.ndarray):
        x = tape.leaf(image / 255.0)
        h = ndgrad.sub(x, ndgrad.gaussian_blur(x, self.hp_sigma))
        h = ndgrad.conv2d(h, self.weights[0], stride=self.STRIDE, padding=self.PADDING)
        h = ndgrad.relu(h)
        h = ndgrad.conv2d(h, self.weights[1], stride=self.STRIDE, padding=self.PADDING)
        h = ndgrad.relu(h)
        h = ndgrad.conv2d(h, self.weights[2], stride=self.STRIDE, padding=self.PADDING)
        z = ndgrad.global_avg_pool(h)
        return x, z

    def forward(self, image: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        _, z = self._build(ndgrad.Tape(), image)
        return z.value.copy()

    def forward_with_vjp(self, image: np.ndarray):
        image = self._check_image(image)
        tape = ndgrad.Tape()
        x, z = self._build(tape, image)

        def vjp(g):
            g = self._check_cotangent(g)
            grads = tape.backward({z: g})
            return grads[x] / 255.0

        return z.value.copy(), vjp

    def input_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        _, vjp = self.forward_with_vjp(image)
        return vjp(cotangent)


def make_linear_extractor(seed: int, d: int, in_h: int, in_w: int) -> LinearExtractor:
    return LinearExtractor(seed, d, in_h, in_w)


def make_convnet_extractor(seed: int, d: int) -> ConvnetExtractor:
    return ConvnetExtractor(seed, d)


# ---------------------------------------------------------------------------
# weight export (consumed by the feature server for loopback serving)
# ---------------------------------------------------------------------------

def export_convnet_weights(extractor: ConvnetExtractor, path: str) -> None:
    doc = {
        "arch": "convnet3",
        "latent_dim": extractor.latent_dim,
        "stride": extractor.STRIDE,
        "padding": extractor.PADDING,
        "normalize": 255.0,
        "hp_sigma": extractor.hp_sigma,
        "layers": [
            {"shape": list(w.shape), "data": w.ravel().tolist()}
            for w in extractor.weights
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_convnet_weights(path: str) -> ConvnetExtractor:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("arch") != "convnet3":
        raise ParameterError(f"unsupported extractor archive: {doc.get('arch')!r}")
    weights = [np.asarray(layer["data"], dtype=np.float64).reshape(layer["shape"])
               for layer in doc["layers"]]
    return ConvnetExtractor(seed=0, d=doc["latent_dim"], weights=weights,
                            hp_sigma=doc.get("hp_sigma", ConvnetExtractor.HP_SIGMA))


# ---------------------------------------------------------------------------
# remote extractor (FMV1 client)
# ---------------------------------------------------------------------------

class _SocketTransport:
    def __init__(self, host: str, port: int):
        try:
            self.sock = socket.create_connection((host, port), timeout=30.0)
        except OSError as e:
            raise RemoteError(f"cannot connect to {host}:{port}: {e}") from e

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise RemoteError("connection closed mid-frame")
            buf += chunk
        return buf

    def close(self) -> None:
        self.sock.close()


class _StdioTransport:
    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def send(self, data: bytes) -> None:
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def read_exact(self, n: int) -> bytes:
        buf = self.proc.stdout.read(n)
        if buf is None or len(buf) < n:
            raise RemoteError("server pipe closed mid-frame")
        return buf

    def close(self) -> None:
        self.proc.stdin.close()
        self.proc.wait(timeout=10)


def _open_transport(endpoint: str):
    if endpoint.startswith("stdio:"):
        return _StdioTransport(endpoint[len("stdio:"):])
    addr = endpoint[len("tcp://"):] if endpoint.startswith("tcp://") else endpoint
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise RemoteError(f"bad endpoint {endpoint!r}; use host:port or stdio:COMMAND")
    return _SocketTransport(host, int(port))


class RemoteExtractor(FeatureExtractor):
    """Forward/VJP delegated to a feature server over FMV1 (f32 wire)."""

    def __init__(self, endpoint: str, d: int):
        self.endpoint = endpoint
        self.transport = _open_transport(endpoint)
        self.transport.send(fmv1.encode_frame(fmv1.HELLO_REQ))
        kind, payload = self._read_frame()
        if kind != fmv1.HELLO_RESP:
            raise RemoteError(f"expected HELLO_RESP, got type 0x{kind:02x}")
        dim, version = fmv1.decode_hello_resp(payload)
        if version != fmv1.PROTOCOL_VERSION:
            raise RemoteError(f"protocol version mismatch: server={version}")
        if dim != d:
            raise RemoteError(f"latent dim mismatch: server={dim}, expected {d}")
        self.latent_dim = d

    def _read_frame(self):
        kind, payload = fmv1.decode_frame(self.transport.read_exact)
        if kind == fmv1.ERROR:
            code, msg = fmv1.decode_error(payload)
            raise RemoteError(f"server error 0x{code:02x}: {msg}")
        return kind, payload

    def forward(self, image: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        self.transport.send(fmv1.encode_frame(fmv1.FORWARD_REQ, fmv1.encode_tensor(image)))
        kind, payload = self._read_frame()
        if kind != fmv1.FORWARD_RESP:
            raise RemoteError(f"expected FORWARD_RESP, got type 0x{kind:02x}")
        z, _ = fmv1.decode_tensor(payload)
        if z.shape != (self.latent_dim,):
            raise RemoteError(f"server returned latent of shape {z.shape}")
        return z

    def input_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        g = self._check_cotangent(cotangent)
        payload = fmv1.encode_tensor(image) + fmv1.encode_tensor(g)
        self.transport.send(fmv1.encode_frame(fmv1.VJP_REQ, payload))
        kind, payload = self._read_frame()
        if kind != fmv1.VJP_RESP:
            raise RemoteError(f"expected VJP_RESP, got type 0x{kind:02x}")
        gx, _ = fmv1.decode_tensor(payload)
        if gx.shape != image.shape:
            raise RemoteError(f"server returned gradient of shape {gx.shape}")
        return gx

    def close(self) -> None:
        self.transport.close()


def make_remote_extractor(endpoint: str, d: int) -> RemoteExtractor:
    return RemoteExtractor(endpoint, d)


def serve_check(remote: RemoteExtractor, twin: FeatureExtractor,
                probes: int = 3, size: int = 32, seed: int = 0) -> dict:
    """Compare a remote extractor against an in-process twin.

    Probes are integer-valued images (exact on the f32 wire), so the deltas
    measure the server's math plus response rounding only.  Returns max
    absolute deltas for forward and VJP.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    fwd_delta = vjp_delta = 0.0
    for _ in range(probes):
        img = np.floor(rng.uniform(0, 256, size=(size, size, 3)))
        z_remote = remote.forward(img)
        z_local = twin.forward(img)
        fwd_delta = max(fwd_delta, float(np.max(np.abs(z_remote - z_local))))
        g = rng.standard_normal(twin.latent_dim)
        gx_remote = remote.input_vjp(img, g)
        gx_local = twin.input_vjp(img, g)
        vjp_delta = max(vjp_delta, float(np.max(np.abs(gx_remote - gx_local))))
    return {"forward_delta": fwd_delta, "vjp_delta": vjp_delta}
