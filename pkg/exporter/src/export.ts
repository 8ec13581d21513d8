/**
 * Export a frozen checkpoint's logits and pre-classifier embeddings over an
 * image folder, one dataset directory per requested scale.
 *
 * Scale s writes to `<out>_s<round(100 s)>`, so scales 0.25/0.5/1.0 produce
 * the sibling directories `_s25` / `_s50` / `_s100` that the scoring CLI's
 * test-time augmentation discovers next to each other.
 */

import * as fs from 'fs';
import * as path from 'path';

import {
  LabelImage,
  listPngs,
  readLabelPng,
  readRgbPng,
  resizeLabels,
  resizeRgb,
  scaledSize,
} from './images';
import { loadZooModel } from './zoo';
import { writeManifest, writeSampleDir } from './store';

export interface ExportOptions {
  images: string;
  modelId: string;
  scales: number[];
  out: string;
  labels?: string;
  fp16?: boolean;
}

export interface ExportResult {
  /** One dataset directory per scale, in the order given. */
  dirs: string[];
  sampleIds: string[];
}

export function scaleSuffix(scale: number): string {
  return `_s${Math.round(scale * 100)}`;
}

/**
 * Guard against accidentally exporting post-softmax outputs: those have
 * logsumexp identically zero, which would collapse every energy feature.
 */
export function checkPreSoftmax(logits: Float32Array, nClasses: number): void {
  const pixels = logits.length / nClasses;
  let maxAbs = 0;
  for (let p = 0; p < pixels; p++) {
    let m = -Infinity;
    for (let c = 0; c < nClasses; c++) m = Math.max(m, logits[c * pixels + p]);
    let sum = 0;
    for (let c = 0; c < nClasses; c++) sum += Math.exp(logits[c * pixels + p] - m);
    maxAbs = Math.max(maxAbs, Math.abs(m + Math.log(sum)));
  }
  if (maxAbs < 1e-3) {
    throw new Error(
      'logits look post-softmax (logsumexp ~ 0 everywhere); export pre-softmax outputs',
    );
  }
}

function labelFileFor(labelsDir: string, stem: string): string | null {
  const candidate = path.join(labelsDir, `${stem}.png`);
  return fs.existsSync(candidate) ? candidate : null;
}

export async function exportDataset(options: ExportOptions): Promise<ExportResult> {
  if (options.scales.length === 0) throw new Error('need at least one scale');
  for (const scale of options.scales) {
    if (!(scale > 0) || !Number.isFinite(scale)) throw new Error(`bad scale ${scale}`);
  }
  const files = listPngs(options.images);
  if (files.length === 0) throw new Error(`no PNG images in ${options.images}`);

  const model = await loadZooModel(options.modelId);
  try {
    const dirs = options.scales.map(scale => options.out + scaleSuffix(scale));
    const sampleIds: string[] = [];
    for (const file of files) {
      const image = readRgbPng(file);
      sampleIds.push(image.stem);
      let labels: LabelImage | null = null;
      if (options.labels) {
        const labelFile = labelFileFor(options.labels, image.stem);
        if (labelFile) {
          labels = readLabelPng(labelFile);
          if (labels.height !== image.height || labels.width !== image.width) {
            throw new Error(
              `${image.stem}: labels are ${labels.height}x${labels.width}, ` +
                `image is ${image.height}x${image.width}`,
            );
          }
        }
      }
      options.scales.forEach((scale, i) => {
        const h = scaledSize(image.height, scale);
        const w = scaledSize(image.width, scale);
        const scaled = scale === 1 ? image : resizeRgb(image, h, w);
        const result = model.infer(scaled.pixels, h, w);
        checkPreSoftmax(result.logits, model.nClasses);
        writeSampleDir(
          dirs[i],
          {
            sampleId: image.stem,
            logits: result.logits,
            embeddings: result.embeddings,
            labels: labels ? (scale === 1 ? labels : resizeLabels(labels, h, w)).values : undefined,
            nClasses: model.nClasses,
            embedDim: model.embedDim,
            height: h,
            width: w,
          },
          options.fp16 ?? false,
        );
      });
    }
    for (let i = 0; i < dirs.length; i++) {
      writeManifest(dirs[i], {
        nClasses: model.nClasses,
        embedDim: model.embedDim,
        modelId: options.modelId,
        scale: options.scales[i],
        sampleIds,
      });
    }
    return { dirs, sampleIds };
  } finally {
    model.dispose();
  }
}
