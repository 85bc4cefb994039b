"""Byte-level conformance against the stored FMV1 fixture frames.

The feature-server package checks its encoder/decoder against the same
files, so both sides of the wire share one source of truth.
"""

import json
from pathlib import Path

import numpy as np

from latentmark import fmv1

FIXTURES = Path(__file__).parent / "fixtures" / "fmv1"


def load(name: str) -> bytes:
    return (FIXTURES / name).read_bytes()


def test_hello_req_bytes():
    assert fmv1.encode_frame(fmv1.HELLO_REQ) == load("hello_req.bin")


def test_hello_resp_bytes():
    frame = fmv1.encode_frame(fmv1.HELLO_RESP, fmv1.encode_hello_resp(128))
    assert frame == load("hello_resp_d128.bin")


def test_forward_req_bytes_and_decode():
    desc = json.loads((FIXTURES / "frames.json").read_text())
    entry = desc["frames"]["forward_req_2x2x3.bin"]
    tensor = np.asarray(entry["data"]).reshape(entry["dims"])
    assert fmv1.encode_frame(fmv1.FORWARD_REQ, fmv1.encode_tensor(tensor)) \
        == load("forward_req_2x2x3.bin")
    raw = load("forward_req_2x2x3.bin")
    pos = [0]

    def read_exact(n):
        chunk = raw[pos[0]:pos[0] + n]
        pos[0] += n
        return chunk

    kind, payload = fmv1.decode_frame(read_exact)
    assert kind == fmv1.FORWARD_REQ
    decoded, _ = fmv1.decode_tensor(payload)
    np.testing.assert_array_equal(decoded, tensor)


def test_vjp_req_bytes():
    desc = json.loads((FIXTURES / "frames.json").read_text())
    entry = desc["frames"]["vjp_req_2x2x3_d16.bin"]
    img = np.asarray(entry["image_data"]).reshape(entry["image_dims"])
    cot = np.asarray(entry["cotangent_data"])
    frame = fmv1.encode_frame(
        fmv1.VJP_REQ, fmv1.encode_tensor(img) + fmv1.encode_tensor(cot))
    assert frame == load("vjp_req_2x2x3_d16.bin")


def test_error_frame_bytes():
    frame = fmv1.encode_frame(fmv1.ERROR, fmv1.encode_error(fmv1.ERR_SHAPE, "bad shape"))
    assert frame == load("error_shape.bin")
