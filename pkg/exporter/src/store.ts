/**
 * Dataset-directory writer matching the detector pipeline's storage layout:
 * one directory per sample holding logits.npy / labels.npy / embeddings.npy
 * (NPY v1.0, little-endian, C-order) plus a top-level manifest.json. Writes
 * go through a temp file + rename and are byte-stable across runs.
 */

import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';

import { encodeNpy, NpyDtype } from './npy';

export function atomicWrite(file: string, payload: Buffer): void {
  const dir = path.dirname(path.resolve(file));
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.tmp-${process.pid}-${path.basename(file)}`);
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, file);
}

function sortedDeep(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortedDeep);
  if (value !== null && typeof value === 'object') {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortedDeep((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export function writeJson(file: string, doc: unknown): void {
  atomicWrite(file, Buffer.from(JSON.stringify(sortedDeep(doc), null, 2) + os.EOL, 'utf-8'));
}

export interface SampleTensors {
  sampleId: string;
  /** C x H x W pre-softmax logits. */
  logits: Float32Array;
  /** V x H x W pre-classifier features. */
  embeddings: Float32Array;
  /** H x W class indices with 255 for void; omitted when no ground truth. */
  labels?: Int32Array;
  nClasses: number;
  embedDim: number;
  height: number;
  width: number;
}

export function writeSampleDir(root: string, sample: SampleTensors, fp16: boolean): void {
  const dir = path.join(root, sample.sampleId);
  fs.mkdirSync(dir, { recursive: true });
  const floatDtype: NpyDtype = fp16 ? '<f2' : '<f4';
  const { nClasses, embedDim, height, width } = sample;
  atomicWrite(
    path.join(dir, 'logits.npy'),
    encodeNpy(sample.logits, [nClasses, height, width], floatDtype),
  );
  atomicWrite(
    path.join(dir, 'embeddings.npy'),
    encodeNpy(sample.embeddings, [embedDim, height, width], floatDtype),
  );
  if (sample.labels) {
    atomicWrite(path.join(dir, 'labels.npy'), encodeNpy(sample.labels, [height, width], '<i4'));
  }
}

export interface ManifestInfo {
  nClasses: number;
  embedDim: number;
  modelId: string;
  scale: number;
  sampleIds: string[];
}

export function writeManifest(root: string, info: ManifestInfo): void {
  const classNames = Array.from({ length: info.nClasses }, (_, i) => `class_${i}`);
  writeJson(path.join(root, 'manifest.json'), {
    C: info.nClasses,
    V: info.embedDim,
    class_names: classNames,
    model_id: info.modelId,
    sample_ids: info.sampleIds,
    scale: info.scale,
  });
}
