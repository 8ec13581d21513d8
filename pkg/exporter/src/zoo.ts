/**
 * Frozen segmentation checkpoints addressed by model id.
 *
 * Each id maps to a fixed convolutional architecture (a small trunk, a
 * pre-classifier embedding layer, and a 1x1 linear classifier) whose
 * weights are generated from a PRNG seeded by the id, so loading the same
 * id always yields byte-identical parameters. Inference is pure function
 * application: no dropout, no augmentation, so exports are deterministic.
 */

import * as tf from '@tensorflow/tfjs';

import { hashString, normalArray } from './prng';

export interface ZooSpec {
  /** Known classes C. */
  nClasses: number;
  /** Width V of the layer feeding the linear classifier. */
  embedDim: number;
  /** Trunk convolution widths. */
  hidden: number[];
  kernel: number;
}

export const MODEL_ZOO: Record<string, ZooSpec> = {
  'seg-micro-c6': { nClasses: 6, embedDim: 8, hidden: [8], kernel: 3 },
  'seg-small-c12': { nClasses: 12, embedDim: 16, hidden: [12, 12], kernel: 3 },
  'seg-wide-c19': { nClasses: 19, embedDim: 32, hidden: [16, 16], kernel: 5 },
};

export interface InferenceResult {
  /** Pre-softmax classifier outputs, C x H x W. */
  logits: Float32Array;
  /** Pre-classifier features, V x H x W. */
  embeddings: Float32Array;
  height: number;
  width: number;
}

export class SegmentationModel {
  readonly id: string;
  readonly nClasses: number;
  readonly embedDim: number;
  private readonly model: tf.LayersModel;

  constructor(id: string, spec: ZooSpec) {
    this.id = id;
    this.nClasses = spec.nClasses;
    this.embedDim = spec.embedDim;

    const input = tf.input({ shape: [null, null, 3] });
    let x: tf.SymbolicTensor = input;
    spec.hidden.forEach((width, i) => {
      x = tf.layers
        .conv2d({
          filters: width,
          kernelSize: spec.kernel,
          padding: 'same',
          activation: 'relu',
          name: `trunk_${i}`,
        })
        .apply(x) as tf.SymbolicTensor;
    });
    const embeddings = tf.layers
      .conv2d({
        filters: spec.embedDim,
        kernelSize: spec.kernel,
        padding: 'same',
        activation: 'tanh',
        name: 'embeddings',
      })
      .apply(x) as tf.SymbolicTensor;
    const logits = tf.layers
      .conv2d({
        filters: spec.nClasses,
        kernelSize: 1,
        padding: 'same',
        activation: 'linear',
        name: 'classifier',
      })
      .apply(embeddings) as tf.SymbolicTensor;
    this.model = tf.model({ inputs: input, outputs: [logits, embeddings] });

    for (const layer of this.model.layers) {
      const current = layer.getWeights();
      if (current.length === 0) continue;
      layer.setWeights(
        current.map((w, j) => {
          const size = w.shape.reduce((a, b) => a * (b ?? 1), 1);
          const fanIn = w.shape.length === 4 ? w.shape[0]! * w.shape[1]! * w.shape[2]! : size;
          const scale = j === 0 ? Math.sqrt(2 / fanIn) : 0.5;
          const kind = j === 0 ? 'kernel' : 'bias';
          const values = normalArray(hashString(`${id}/${layer.name}/${kind}`), size, scale);
          return tf.tensor(values, w.shape as number[]);
        }),
      );
    }
  }

  /** Run the checkpoint on one H x W x 3 image in [0, 1]. */
  infer(image: Float32Array, height: number, width: number): InferenceResult {
    return tf.tidy(() => {
      const batch = tf.tensor4d(image, [1, height, width, 3]);
      const [logitsHwc, embedHwc] = this.model.predict(batch) as tf.Tensor4D[];
      const logits = tf.transpose(tf.squeeze(logitsHwc, [0]), [2, 0, 1]);
      const embeddings = tf.transpose(tf.squeeze(embedHwc, [0]), [2, 0, 1]);
      return {
        logits: logits.dataSync() as Float32Array,
        embeddings: embeddings.dataSync() as Float32Array,
        height,
        width,
      };
    });
  }

  /** The checkpoint's own prediction path: argmax over its logits output. */
  nativeMask(image: Float32Array, height: number, width: number): Int32Array {
    return tf.tidy(() => {
      const batch = tf.tensor4d(image, [1, height, width, 3]);
      const [logitsHwc] = this.model.predict(batch) as tf.Tensor4D[];
      const mask = tf.argMax(tf.squeeze(logitsHwc, [0]), -1);
      return new Int32Array(mask.dataSync());
    });
  }

  dispose(): void {
    this.model.dispose();
  }
}

export async function loadZooModel(id: string): Promise<SegmentationModel> {
  // Silence the backend's stdout banner; keep CLI output parseable.
  tf.env().set('PROD', true);
  await tf.setBackend('cpu');
  await tf.ready();
  const spec = MODEL_ZOO[id];
  if (!spec) {
    const known = Object.keys(MODEL_ZOO).sort().join(', ');
    throw new Error(`unknown model id '${id}' (available: ${known})`);
  }
  return new SegmentationModel(id, spec);
}
