/**
 * FMV1 wire protocol: length-prefixed frames carrying f32 tensors.
 *
 * Frame: u32 length of everything after the field (LE), magic "FMV1",
 * u8 message type, payload.  Tensor payload: u8 ndim, u32*ndim dims,
 * f32 data row-major.
 */

export const MAGIC = Buffer.from("FMV1", "ascii");
export const PROTOCOL_VERSION = 1;

export const FORWARD_REQ = 0x01;
export const FORWARD_RESP = 0x02;
export const VJP_REQ = 0x03;
export const VJP_RESP = 0x04;
export const HELLO_REQ = 0x10;
export const HELLO_RESP = 0x11;
export const ERROR = 0x7f;

export const ERR_MALFORMED = 0x01;
export const ERR_SHAPE = 0x02;
export const ERR_MODEL = 0x03;

export interface Tensor {
  dims: number[];
  /** float64 working precision; converted to f32 on the wire */
  data: Float64Array;
}

export function encodeFrame(msgType: number, payload: Buffer = Buffer.alloc(0)): Buffer {
  const body = Buffer.concat([MAGIC, Buffer.from([msgType]), payload]);
  const out = Buffer.alloc(4 + body.length);
  out.writeUInt32LE(body.length, 0);
  body.copy(out, 4);
  return out;
}

export function encodeTensor(t: Tensor): Buffer {
  const head = Buffer.alloc(1 + 4 * t.dims.length);
  head.writeUInt8(t.dims.length, 0);
  t.dims.forEach((d, i) => head.writeUInt32LE(d, 1 + 4 * i));
  const data = Buffer.alloc(4 * t.data.length);
  for (let i = 0; i < t.data.length; i++) {
    data.writeFloatLE(Math.fround(t.data[i]), 4 * i);
  }
  return Buffer.concat([head, data]);
}

export function decodeTensor(buf: Buffer, offset = 0): { tensor: Tensor; end: number } {
  if (offset + 1 > buf.length) throw new Error("truncated tensor header");
  const ndim = buf.readUInt8(offset);
  offset += 1;
  if (offset + 4 * ndim > buf.length) throw new Error("truncated tensor dims");
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) {
    dims.push(buf.readUInt32LE(offset));
    offset += 4;
  }
  const count = dims.reduce((a, b) => a * b, 1);
  const end = offset + 4 * count;
  if (end > buf.length) throw new Error("truncated tensor data");
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = buf.readFloatLE(offset + 4 * i);
  }
  return { tensor: { dims, data }, end };
}

export function encodeHelloResp(latentDim: number, version = PROTOCOL_VERSION): Buffer {
  const out = Buffer.alloc(8);
  out.writeUInt32LE(latentDim, 0);
  out.writeUInt32LE(version, 4);
  return out;
}

export function encodeError(code: number, message: string): Buffer {
  const msg = Buffer.from(message, "utf-8");
  const out = Buffer.alloc(4 + msg.length);
  out.writeUInt16LE(code, 0);
  out.writeUInt16LE(msg.length, 2);
  msg.copy(out, 4);
  return out;
}

/** Incremental frame splitter for a byte stream. */
export class FrameReader {
  private pending: Buffer = Buffer.alloc(0);

  /** Feed bytes; returns every complete frame as {type, payload}. */
  push(chunk: Buffer): { type: number; payload: Buffer }[] {
    this.pending = this.pending.length
      ? Buffer.concat([this.pending, chunk])
      : chunk;
    const frames: { type: number; payload: Buffer }[] = [];
    for (;;) {
      if (this.pending.length < 4) break;
      const length = this.pending.readUInt32LE(0);
      if (length < 5) throw new Error(`frame too short: ${length}`);
      if (this.pending.length < 4 + length) break;
      const body = this.pending.subarray(4, 4 + length);
      this.pending = this.pending.subarray(4 + length);
      if (!body.subarray(0, 4).equals(MAGIC)) {
        throw new Error("bad magic");
      }
      frames.push({ type: body[4], payload: Buffer.from(body.subarray(5)) });
    }
    return frames;
  }
}
