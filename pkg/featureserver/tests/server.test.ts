import { AddressInfo } from "node:net";
import * as net from "node:net";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { loadWeights, ReferenceConvnet, type Plane } from "../src/convnet.js";
import { handleFrame, serveTcp } from "../src/server.js";
import * as wire from "../src/wire.js";

const here = dirname(fileURLToPath(import.meta.url));
const model = new ReferenceConvnet(
  loadWeights(join(here, "fixtures", "ref_weights.json")));

function probeImage(h: number, w: number): Plane {
  const data = new Float64Array(h * w * 3);
  for (let i = 0; i < data.length; i++) data[i] = (i * 97) % 256;
  return { h, w, c: 3, data };
}

describe("request handling", () => {
  it("hello reports the served latent dim and protocol 1", () => {
    const resp = handleFrame(model, wire.HELLO_REQ, Buffer.alloc(0));
    const frames = new wire.FrameReader().push(resp);
    expect(frames[0].type).toBe(wire.HELLO_RESP);
    expect(frames[0].payload.readUInt32LE(0)).toBe(16);
    expect(frames[0].payload.readUInt32LE(4)).toBe(1);
  });

  it("forward responds with the latent at f32 precision", () => {
    const img = probeImage(12, 10);
    const payload = wire.encodeTensor({ dims: [12, 10, 3], data: img.data });
    const resp = handleFrame(model, wire.FORWARD_REQ, payload);
    const frames = new wire.FrameReader().push(resp);
    expect(frames[0].type).toBe(wire.FORWARD_RESP);
    const { tensor } = wire.decodeTensor(frames[0].payload);
    const exact = model.forward(img);
    for (let i = 0; i < 16; i++) {
      expect(Math.abs(tensor.data[i] - exact[i])).toBeLessThan(1e-6);
    }
  });

  it("identical forward requests produce identical bytes", () => {
    const payload = wire.encodeTensor({ dims: [12, 10, 3], data: probeImage(12, 10).data });
    const a = handleFrame(model, wire.FORWARD_REQ, payload);
    const b = handleFrame(model, wire.FORWARD_REQ, payload);
    expect(a.equals(b)).toBe(true);
  });

  it("shape mismatch answers ERROR 0x02 without a partial result", () => {
    const bad = wire.encodeTensor({ dims: [5], data: new Float64Array(5) });
    const resp = handleFrame(model, wire.FORWARD_REQ, bad);
    const frames = new wire.FrameReader().push(resp);
    expect(frames[0].type).toBe(wire.ERROR);
    expect(frames[0].payload.readUInt16LE(0)).toBe(wire.ERR_SHAPE);
  });

  it("vjp cotangent dim is validated", () => {
    const img = wire.encodeTensor({ dims: [8, 8, 3], data: new Float64Array(8 * 8 * 3) });
    const cot = wire.encodeTensor({ dims: [4], data: new Float64Array(4) });
    const resp = handleFrame(model, wire.VJP_REQ, Buffer.concat([img, cot]));
    const frames = new wire.FrameReader().push(resp);
    expect(frames[0].type).toBe(wire.ERROR);
    expect(frames[0].payload.readUInt16LE(0)).toBe(wire.ERR_SHAPE);
  });

  it("unknown message type answers ERROR 0x01", () => {
    const resp = handleFrame(model, 0x55, Buffer.alloc(0));
    const frames = new wire.FrameReader().push(resp);
    expect(frames[0].type).toBe(wire.ERROR);
    expect(frames[0].payload.readUInt16LE(0)).toBe(wire.ERR_MALFORMED);
  });

  it("vjp over the wire stays linear in the cotangent", () => {
    const img = probeImage(10, 10);
    const imgT = wire.encodeTensor({ dims: [10, 10, 3], data: img.data });
    const d = model.latentDim;
    const g1 = Float64Array.from({ length: d }, (_, i) => Math.sin(i));
    const g2 = Float64Array.from({ length: d }, (_, i) => Math.cos(i));
    const gSum = Float64Array.from({ length: d }, (_, i) => g1[i] + g2[i]);
    const run = (g: Float64Array) => {
      const resp = handleFrame(
        model, wire.VJP_REQ,
        Buffer.concat([imgT, wire.encodeTensor({ dims: [d], data: g })]));
      const frames = new wire.FrameReader().push(resp);
      expect(frames[0].type).toBe(wire.VJP_RESP);
      return wire.decodeTensor(frames[0].payload).tensor.data;
    };
    const a = run(g1);
    const b = run(g2);
    const s = run(gSum);
    let worst = 0;
    for (let i = 0; i < s.length; i++) {
      worst = Math.max(worst, Math.abs(s[i] - a[i] - b[i]));
    }
    expect(worst).toBeLessThan(1e-4);
  });
});

describe("tcp transport", () => {
  let server: net.Server;
  let port = 0;

  beforeAll(async () => {
    await new Promise<void>((resolve) => {
      server = serveTcp(model, "127.0.0.1", 0, (p) => {
        port = p;
        resolve();
      });
    });
  });

  afterAll(() => {
    server.close();
  });

  it("answers hello then forward on one connection", async () => {
    const conn = net.createConnection({ host: "127.0.0.1", port });
    const reader = new wire.FrameReader();
    const collected: { type: number; payload: Buffer }[] = [];
    const done = new Promise<void>((resolve) => {
      conn.on("data", (chunk) => {
        collected.push(...reader.push(chunk));
        if (collected.length >= 2) {
          conn.end();
          resolve();
        }
      });
    });
    conn.write(wire.encodeFrame(wire.HELLO_REQ));
    const img = probeImage(8, 8);
    conn.write(wire.encodeFrame(
      wire.FORWARD_REQ, wire.encodeTensor({ dims: [8, 8, 3], data: img.data })));
    await done;
    expect(collected[0].type).toBe(wire.HELLO_RESP);
    expect(collected[1].type).toBe(wire.FORWARD_RESP);
  });
});
