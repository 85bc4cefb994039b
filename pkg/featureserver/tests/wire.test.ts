import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { describe, expect, it } from "vitest";
import * as wire from "../src/wire.js";

// shared conformance vectors live beside the client's test suite
const FIXTURES = join(
  dirname(fileURLToPath(import.meta.url)), "..", "..", "tests", "fixtures", "fmv1");

const load = (name: string) => readFileSync(join(FIXTURES, name));
const desc = JSON.parse(readFileSync(join(FIXTURES, "frames.json"), "utf-8"));

describe("frame encoding against shared fixtures", () => {
  it("hello request", () => {
    expect(wire.encodeFrame(wire.HELLO_REQ).equals(load("hello_req.bin"))).toBe(true);
  });

  it("hello response carries dim and version", () => {
    const frame = wire.encodeFrame(wire.HELLO_RESP, wire.encodeHelloResp(128));
    expect(frame.equals(load("hello_resp_d128.bin"))).toBe(true);
  });

  it("forward request tensor layout", () => {
    const entry = desc.frames["forward_req_2x2x3.bin"];
    const tensor = { dims: entry.dims, data: Float64Array.from(entry.data) };
    const frame = wire.encodeFrame(wire.FORWARD_REQ, wire.encodeTensor(tensor));
    expect(frame.equals(load("forward_req_2x2x3.bin"))).toBe(true);
  });

  it("vjp request packs two tensors back to back", () => {
    const entry = desc.frames["vjp_req_2x2x3_d16.bin"];
    const img = { dims: entry.image_dims, data: Float64Array.from(entry.image_data) };
    const cot = { dims: entry.cotangent_dims, data: Float64Array.from(entry.cotangent_data) };
    const frame = wire.encodeFrame(
      wire.VJP_REQ,
      Buffer.concat([wire.encodeTensor(img), wire.encodeTensor(cot)]));
    expect(frame.equals(load("vjp_req_2x2x3_d16.bin"))).toBe(true);
  });

  it("error frame layout", () => {
    const frame = wire.encodeFrame(wire.ERROR, wire.encodeError(wire.ERR_SHAPE, "bad shape"));
    expect(frame.equals(load("error_shape.bin"))).toBe(true);
  });
});

describe("frame reader", () => {
  it("reassembles split frames and round-trips tensors", () => {
    const tensor = { dims: [2, 3], data: Float64Array.from([1, 2, 3, 4, 5, 6]) };
    const frame = wire.encodeFrame(wire.FORWARD_RESP, wire.encodeTensor(tensor));
    const reader = new wire.FrameReader();
    expect(reader.push(frame.subarray(0, 7))).toHaveLength(0);
    const frames = reader.push(frame.subarray(7));
    expect(frames).toHaveLength(1);
    expect(frames[0].type).toBe(wire.FORWARD_RESP);
    const { tensor: decoded } = wire.decodeTensor(frames[0].payload);
    expect(decoded.dims).toEqual([2, 3]);
    expect(Array.from(decoded.data)).toEqual([1, 2, 3, 4, 5, 6]);
  });

  it("rejects bad magic", () => {
    const bogus = Buffer.alloc(9);
    bogus.writeUInt32LE(5, 0);
    bogus.write("NOPE", 4, "ascii");
    expect(() => new wire.FrameReader().push(bogus)).toThrow(/magic/);
  });
});
