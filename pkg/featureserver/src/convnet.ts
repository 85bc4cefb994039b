/**
 * Reference extractor: the exported convolutional feature extractor with its
 * exact input gradient, computed in float64 so loopback deltas against the
 * exporting process stay at wire (f32) precision.
 *
 * Pipeline: x/255 -> high-pass (x - gaussian blur) -> three stride-2 3x3
 * convolutions with relu between -> global average pool.
 */

import { readFileSync } from "node:fs";

export interface ConvLayer {
  shape: [number, number, number, number]; // kh, kw, cin, cout
  data: Float64Array;
}

export interface ConvnetWeights {
  latentDim: number;
  stride: number;
  padding: number;
  normalize: number;
  hpSigma: number;
  layers: ConvLayer[];
}

export interface Plane {
  h: number;
  w: number;
  c: number;
  data: Float64Array; // row-major (h, w, c)
}

export function loadWeights(path: string): ConvnetWeights {
  const doc = JSON.parse(readFileSync(path, "utf-8"));
  if (doc.arch !== "convnet3") {
    throw new Error(`unsupported extractor archive: ${doc.arch}`);
  }
  return {
    latentDim: doc.latent_dim,
    stride: doc.stride,
    padding: doc.padding,
    normalize: doc.normalize,
    hpSigma: doc.hp_sigma ?? 0.5,
    layers: doc.layers.map((l: { shape: number[]; data: number[] }) => ({
      shape: l.shape as [number, number, number, number],
      data: Float64Array.from(l.data),
    })),
  };
}

function gaussianTaps(sigma: number): Float64Array {
  const half = Math.ceil(3 * sigma);
  const taps = new Float64Array(2 * half + 1);
  let sum = 0;
  for (let t = -half; t <= half; t++) {
    const v = Math.exp(-0.5 * (t / sigma) ** 2);
    taps[t + half] = v;
    sum += v;
  }
  for (let i = 0; i < taps.length; i++) taps[i] /= sum;
  return taps;
}

const clip = (i: number, n: number) => (i < 0 ? 0 : i >= n ? n - 1 : i);

/** 1-D correlation along rows (axis 0) or columns (axis 1), clamped edges. */
function sepcorr(x: Plane, taps: Float64Array, axis: 0 | 1): Plane {
  const { h, w, c } = x;
  const out = new Float64Array(h * w * c);
  const cen = (taps.length - 1) >> 1;
  for (let i = 0; i < h; i++) {
    for (let t = 0; t < taps.length; t++) {
      const kt = taps[t];
      if (axis === 0) {
        const src = clip(i + t - cen, h);
        for (let jc = 0; jc < w * c; jc++) {
          out[i * w * c + jc] += kt * x.data[src * w * c + jc];
        }
      } else {
        for (let j = 0; j < w; j++) {
          const src = clip(j + t - cen, w);
          for (let ch = 0; ch < c; ch++) {
            out[(i * w + j) * c + ch] += kt * x.data[(i * w + src) * c + ch];
          }
        }
      }
    }
  }
  return { h, w, c, data: out };
}

/** Adjoint of sepcorr (scatter with the same clamped indexing). */
function sepcorrVjp(g: Plane, taps: Float64Array, axis: 0 | 1): Plane {
  const { h, w, c } = g;
  const out = new Float64Array(h * w * c);
  const cen = (taps.length - 1) >> 1;
  for (let i = 0; i < h; i++) {
    for (let t = 0; t < taps.length; t++) {
      const kt = taps[t];
      if (axis === 0) {
        const dst = clip(i + t - cen, h);
        for (let jc = 0; jc < w * c; jc++) {
          out[dst * w * c + jc] += kt * g.data[i * w * c + jc];
        }
      } else {
        for (let j = 0; j < w; j++) {
          const dst = clip(j + t - cen, w);
          for (let ch = 0; ch < c; ch++) {
            out[(i * w + dst) * c + ch] += kt * g.data[(i * w + j) * c + ch];
          }
        }
      }
    }
  }
  return { h, w, c, data: out };
}

function convForward(x: Plane, layer: ConvLayer, stride: number, pad: number): Plane {
  const [kh, kw, cin, cout] = layer.shape;
  const oh = Math.floor((x.h + 2 * pad - kh) / stride) + 1;
  const ow = Math.floor((x.w + 2 * pad - kw) / stride) + 1;
  const out = new Float64Array(oh * ow * cout);
  const k = layer.data;
  for (let oy = 0; oy < oh; oy++) {
    for (let ox = 0; ox < ow; ox++) {
      const base = (oy * ow + ox) * cout;
      for (let ky = 0; ky < kh; ky++) {
        const iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= x.h) continue;
        for (let kx = 0; kx < kw; kx++) {
          const ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= x.w) continue;
          const xBase = (iy * x.w + ix) * cin;
          const kBase = (ky * kw + kx) * cin * cout;
          for (let ci = 0; ci < cin; ci++) {
            const v = x.data[xBase + ci];
            const kRow = kBase + ci * cout;
            for (let co = 0; co < cout; co++) {
              out[base + co] += v * k[kRow + co];
            }
          }
        }
      }
    }
  }
  return { h: oh, w: ow, c: cout, data: out };
}

function convVjpInput(g: Plane, layer: ConvLayer, stride: number, pad: number,
                      inH: number, inW: number): Plane {
  const [kh, kw, cin, cout] = layer.shape;
  const out = new Float64Array(inH * inW * cin);
  const k = layer.data;
  for (let oy = 0; oy < g.h; oy++) {
    for (let ox = 0; ox < g.w; ox++) {
      const gBase = (oy * g.w + ox) * cout;
      for (let ky = 0; ky < kh; ky++) {
        const iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= inH) continue;
        for (let kx = 0; kx < kw; kx++) {
          const ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= inW) continue;
          const oBase = (iy * inW + ix) * cin;
          const kBase = (ky * kw + kx) * cin * cout;
          for (let ci = 0; ci < cin; ci++) {
            let acc = 0;
            const kRow = kBase + ci * cout;
            for (let co = 0; co < cout; co++) {
              acc += g.data[gBase + co] * k[kRow + co];
            }
            out[oBase + ci] += acc;
          }
        }
      }
    }
  }
  return { h: inH, w: inW, c: cin, data: out };
}

export class ReferenceConvnet {
  readonly latentDim: number;
  private taps: Float64Array;

  constructor(private weights: ConvnetWeights) {
    this.latentDim = weights.latentDim;
    this.taps = gaussianTaps(weights.hpSigma);
  }

  private frontEnd(image: Plane): Plane {
    const { h, w, c } = image;
    const x = new Float64Array(image.data.length);
    const inv = 1 / this.weights.normalize;
    for (let i = 0; i < x.length; i++) x[i] = image.data[i] * inv;
    const scaled: Plane = { h, w, c, data: x };
    const low = sepcorr(sepcorr(scaled, this.taps, 0), this.taps, 1);
    const hp = new Float64Array(x.length);
    for (let i = 0; i < x.length; i++) hp[i] = x[i] - low.data[i];
    return { h, w, c, data: hp };
  }

  /** Forward pass keeping intermediate activations for the backward pass. */
  private trace(image: Plane): { z: Float64Array; acts: Plane[] } {
    const { stride, padding, layers } = this.weights;
    const acts: Plane[] = [this.frontEnd(image)];
    let cur = acts[0];
    for (let li = 0; li < layers.length; li++) {
      cur = convForward(cur, layers[li], stride, padding);
      if (li < layers.length - 1) {
        for (let i = 0; i < cur.data.length; i++) {
          if (cur.data[i] < 0) cur.data[i] = 0;
        }
      }
      acts.push(cur);
    }
    const z = new Float64Array(cur.c);
    const cells = cur.h * cur.w;
    for (let p = 0; p < cells; p++) {
      for (let ch = 0; ch < cur.c; ch++) z[ch] += cur.data[p * cur.c + ch];
    }
    for (let ch = 0; ch < cur.c; ch++) z[ch] /= cells;
    return { z, acts };
  }

  forward(image: Plane): Float64Array {
    return this.trace(image).z;
  }

  /** d(z . cotangent)/d(image), exact. */
  inputVjp(image: Plane, cotangent: Float64Array): Plane {
    if (cotangent.length !== this.latentDim) {
      throw new RangeError(
        `cotangent length ${cotangent.length} != ${this.latentDim}`);
    }
    const { stride, padding, layers } = this.weights;
    const { acts } = this.trace(image);
    const top = acts[acts.length - 1];
    const cells = top.h * top.w;
    let g: Plane = {
      h: top.h, w: top.w, c: top.c,
      data: new Float64Array(top.data.length),
    };
    for (let p = 0; p < cells; p++) {
      for (let ch = 0; ch < top.c; ch++) {
        g.data[p * top.c + ch] = cotangent[ch] / cells;
      }
    }
    for (let li = layers.length - 1; li >= 0; li--) {
      const below = acts[li];
      g = convVjpInput(g, layers[li], stride, padding, below.h, below.w);
      if (li > 0) {
        // relu gate: `below` stores the rectified activation
        for (let i = 0; i < g.data.length; i++) {
          if (below.data[i] <= 0) g.data[i] = 0;
        }
      }
    }
    // adjoint of the high-pass front end, then the /255 normalization
    const lowAdj = sepcorrVjp(sepcorrVjp(g, this.taps, 1), this.taps, 0);
    const out = new Float64Array(g.data.length);
    const inv = 1 / this.weights.normalize;
    for (let i = 0; i < out.length; i++) {
      out[i] = (g.data[i] - lowAdj.data[i]) * inv;
    }
    return { h: image.h, w: image.w, c: image.c, data: out };
  }
}
