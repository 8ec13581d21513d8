/** PNG folder reading and the resampling used for multi-resolution export. */

import * as fs from 'fs';
import * as path from 'path';

import { PNG } from 'pngjs';

export interface RgbImage {
  /** File stem, used as the sample id. */
  stem: string;
  height: number;
  width: number;
  /** H x W x 3, values in [0, 1]. */
  pixels: Float32Array;
}

export interface LabelImage {
  height: number;
  width: number;
  /** H x W class indices; 255 marks void. */
  values: Int32Array;
}

export function listPngs(dir: string): string[] {
  if (!fs.existsSync(dir) || !fs.statSync(dir).isDirectory()) {
    throw new Error(`not a directory: ${dir}`);
  }
  return fs
    .readdirSync(dir)
    .filter(name => name.toLowerCase().endsWith('.png'))
    .sort()
    .map(name => path.join(dir, name));
}

export function readRgbPng(file: string): RgbImage {
  const png = PNG.sync.read(fs.readFileSync(file));
  const pixels = new Float32Array(png.height * png.width * 3);
  for (let i = 0; i < png.height * png.width; i++) {
    pixels[i * 3] = png.data[i * 4] / 255;
    pixels[i * 3 + 1] = png.data[i * 4 + 1] / 255;
    pixels[i * 3 + 2] = png.data[i * 4 + 2] / 255;
  }
  return { stem: path.parse(file).name, height: png.height, width: png.width, pixels };
}

/** Labels are stored in the red channel of a PNG of the same size. */
export function readLabelPng(file: string): LabelImage {
  const png = PNG.sync.read(fs.readFileSync(file));
  const values = new Int32Array(png.height * png.width);
  for (let i = 0; i < values.length; i++) values[i] = png.data[i * 4];
  return { height: png.height, width: png.width, values };
}

export function scaledSize(size: number, scale: number): number {
  return Math.max(1, Math.round(size * scale));
}

function sourceCenter(dst: number, srcSize: number, dstSize: number): number {
  // Half-pixel centers, clamped at the borders.
  const center = ((dst + 0.5) * srcSize) / dstSize - 0.5;
  return Math.min(Math.max(center, 0), srcSize - 1);
}

/** Bilinear resize of an H x W x 3 image in [0, 1]. */
export function resizeRgb(image: RgbImage, outH: number, outW: number): RgbImage {
  const out = new Float32Array(outH * outW * 3);
  for (let y = 0; y < outH; y++) {
    const sy = sourceCenter(y, image.height, outH);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, image.height - 1);
    const fy = sy - y0;
    for (let x = 0; x < outW; x++) {
      const sx = sourceCenter(x, image.width, outW);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, image.width - 1);
      const fx = sx - x0;
      for (let c = 0; c < 3; c++) {
        const top =
          image.pixels[(y0 * image.width + x0) * 3 + c] * (1 - fx) +
          image.pixels[(y0 * image.width + x1) * 3 + c] * fx;
        const bottom =
          image.pixels[(y1 * image.width + x0) * 3 + c] * (1 - fx) +
          image.pixels[(y1 * image.width + x1) * 3 + c] * fx;
        out[(y * outW + x) * 3 + c] = top * (1 - fy) + bottom * fy;
      }
    }
  }
  return { stem: image.stem, height: outH, width: outW, pixels: out };
}

/** Nearest-neighbor resize for class-index maps (never blends labels). */
export function resizeLabels(labels: LabelImage, outH: number, outW: number): LabelImage {
  const out = new Int32Array(outH * outW);
  for (let y = 0; y < outH; y++) {
    const sy = Math.round(sourceCenter(y, labels.height, outH));
    for (let x = 0; x < outW; x++) {
      const sx = Math.round(sourceCenter(x, labels.width, outW));
      out[y * outW + x] = labels.values[sy * labels.width + sx];
    }
  }
  return { height: outH, width: outW, values: out };
}
