/**
 * FMV1 request handling over TCP sockets or a stdio pipe.
 *
 * One request at a time per connection; FORWARD is idempotent and the model
 * is never mutated between requests.
 */

import * as net from "node:net";
import type { Readable, Writable } from "node:stream";
import * as wire from "./wire.js";
import type { Plane } from "./convnet.js";

export interface ServedModel {
  latentDim: number;
  forward(image: Plane): Float64Array;
  inputVjp(image: Plane, cotangent: Float64Array): Plane;
}

function planeFromTensor(t: wire.Tensor): Plane {
  if (t.dims.length !== 3) {
    throw new RangeError(`expected an (H, W, C) image, got dims ${t.dims}`);
  }
  const [h, w, c] = t.dims;
  return { h, w, c, data: t.data };
}

export function handleFrame(model: ServedModel, type: number,
                            payload: Buffer): Buffer {
  try {
    switch (type) {
      case wire.HELLO_REQ:
        return wire.encodeFrame(wire.HELLO_RESP, wire.encodeHelloResp(model.latentDim));
      case wire.FORWARD_REQ: {
        let image: Plane;
        try {
          image = planeFromTensor(wire.decodeTensor(payload).tensor);
        } catch (e) {
          return errorFrame(wire.ERR_SHAPE, e);
        }
        const z = model.forward(image);
        return wire.encodeFrame(
          wire.FORWARD_RESP, wire.encodeTensor({ dims: [z.length], data: z }));
      }
      case wire.VJP_REQ: {
        let image: Plane;
        let cot: wire.Tensor;
        try {
          const first = wire.decodeTensor(payload);
          image = planeFromTensor(first.tensor);
          cot = wire.decodeTensor(payload, first.end).tensor;
          if (cot.dims.length !== 1 || cot.dims[0] !== model.latentDim) {
            throw new RangeError(`cotangent dims ${cot.dims} != [${model.latentDim}]`);
          }
        } catch (e) {
          return errorFrame(wire.ERR_SHAPE, e);
        }
        const gx = model.inputVjp(image, cot.data);
        return wire.encodeFrame(
          wire.VJP_RESP,
          wire.encodeTensor({ dims: [gx.h, gx.w, gx.c], data: gx.data }));
      }
      default:
        return errorFrame(wire.ERR_MALFORMED, new Error(`unknown type 0x${type.toString(16)}`));
    }
  } catch (e) {
    return errorFrame(wire.ERR_MODEL, e);
  }
}

function errorFrame(code: number, e: unknown): Buffer {
  const msg = e instanceof Error ? e.message : String(e);
  return wire.encodeFrame(wire.ERROR, wire.encodeError(code, msg));
}

export function attachStream(model: ServedModel, input: Readable,
                             output: Writable, onClose?: () => void): void {
  const reader = new wire.FrameReader();
  input.on("data", (chunk: Buffer) => {
    let frames;
    try {
      frames = reader.push(chunk);
    } catch (e) {
      output.write(errorFrame(wire.ERR_MALFORMED, e));
      return;
    }
    for (const { type, payload } of frames) {
      output.write(handleFrame(model, type, payload));
    }
  });
  input.on("end", () => onClose?.());
  input.on("error", () => onClose?.());
}

export function serveTcp(model: ServedModel, host: string, port: number,
                         onListening?: (port: number) => void): net.Server {
  const server = net.createServer((conn) => {
    attachStream(model, conn, conn, () => conn.destroy());
    conn.on("error", () => conn.destroy());
  });
  server.listen(port, host, () => {
    const addr = server.address() as net.AddressInfo;
    onListening?.(addr.port);
  });
  return server;
}

export function serveStdio(model: ServedModel): void {
  // stdout carries frames only; diagnostics go to stderr
  attachStream(model, process.stdin, process.stdout, () => process.exit(0));
}
