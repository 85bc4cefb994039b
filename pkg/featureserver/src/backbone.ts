/**
 * Optional pretrained-backbone model: a tfjs LayersModel served behind the
 * same forward/VJP interface as the reference extractor.
 *
 * The server owns preprocessing: images arrive as [0, 255] rasters and are
 * bilinearly resized to the model's input extents and scaled to [0, 1].
 * Requires @tensorflow/tfjs (resolved at runtime so the reference mode can
 * run without it); gradients come from tf.valueAndGrads, so only models
 * built from differentiable layers are servable.  No weights ship with this
 * repository.
 */

import type { ServedModel } from "./server.js";
import type { Plane } from "./convnet.js";

export async function loadBackbone(modelPath: string): Promise<ServedModel> {
  const tf = await import("@tensorflow/tfjs");
  const model = await tf.loadLayersModel(`file://${modelPath}`);
  const inShape = model.inputs[0].shape; // [null, h, w, c]
  const [, inH, inW, inC] = inShape as number[];
  const outShape = model.outputs[0].shape;
  const latentDim = outShape[outShape.length - 1] as number;

  const preprocess = (image: Plane) => {
    const raw = tf.tensor4d(Array.from(image.data), [1, image.h, image.w, image.c]);
    const resized = tf.image.resizeBilinear(raw as never, [inH, inW]);
    raw.dispose();
    return tf.div(resized, 255.0);
  };

  return {
    latentDim,
    forward(image: Plane): Float64Array {
      return tf.tidy(() => {
        const z = model.predict(preprocess(image)) as { dataSync(): Float32Array };
        return Float64Array.from(z.dataSync());
      });
    },
    inputVjp(image: Plane, cotangent: Float64Array): Plane {
      if (image.c !== inC) {
        throw new RangeError(`backbone expects ${inC} channels`);
      }
      const gradData = tf.tidy(() => {
        const cot = tf.tensor2d(Array.from(cotangent), [1, cotangent.length]);
        const raw = tf.tensor4d(Array.from(image.data), [1, image.h, image.w, image.c]);
        const fn = (x: never) => {
          const resized = tf.image.resizeBilinear(x, [inH, inW]);
          const z = model.predict(tf.div(resized, 255.0)) as never;
          return tf.sum(tf.mul(z, cot as never));
        };
        const { grads } = tf.valueAndGrads(fn as never)([raw as never]);
        return Float64Array.from(grads[0].dataSync());
      });
      return { h: image.h, w: image.w, c: image.c, data: gradData };
    },
  };
}
