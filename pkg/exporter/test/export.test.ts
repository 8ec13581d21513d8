import { execFileSync } from 'child_process';
import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';

import { PNG } from 'pngjs';
import { beforeAll, describe, expect, it } from 'vitest';

import { exportDataset, scaleSuffix } from '../src/export';
import { resizeRgb, readRgbPng, scaledSize } from '../src/images';
import { decodeNpy } from '../src/npy';
import { uniformStream } from '../src/prng';
import { loadZooModel } from '../src/zoo';
import { main } from '../src/cli';

const MODEL_ID = 'seg-micro-c6';
const C = 6;
const V = 8;
const HEIGHT = 24;
const WIDTH = 32;
const N_IMAGES = 5;
const SCALES = [0.25, 0.5, 1.0];

let root: string;
let imagesDir: string;
let labelsDir: string;
let outBase: string;
let exportDirs: string[];

function writePng(file: string, height: number, width: number, rgb: (i: number) => number[]): void {
  const png = new PNG({ height, width });
  for (let i = 0; i < height * width; i++) {
    const [r, g, b] = rgb(i);
    png.data[i * 4] = r;
    png.data[i * 4 + 1] = g;
    png.data[i * 4 + 2] = b;
    png.data[i * 4 + 3] = 255;
  }
  fs.writeFileSync(file, PNG.sync.write(png));
}

function makeFixtures(): void {
  fs.mkdirSync(imagesDir, { recursive: true });
  fs.mkdirSync(labelsDir, { recursive: true });
  for (let n = 0; n < N_IMAGES; n++) {
    const noise = uniformStream(1000 + n);
    writePng(path.join(imagesDir, `img_${n}.png`), HEIGHT, WIDTH, i => {
      const y = Math.floor(i / WIDTH);
      const x = i % WIDTH;
      return [
        Math.floor(255 * (x / WIDTH) * noise()),
        Math.floor(255 * (y / HEIGHT)),
        Math.floor(255 * noise()),
      ];
    });
    const labelNoise = uniformStream(2000 + n);
    writePng(path.join(labelsDir, `img_${n}.png`), HEIGHT, WIDTH, i => {
      const y = Math.floor(i / WIDTH);
      const x = i % WIDTH;
      const voidBlock = y >= 2 && y < 10 && x >= 4 && x < 12;
      const cls = voidBlock ? 255 : Math.floor(C * labelNoise());
      return [cls, 0, 0];
    });
  }
}

function argmaxChw(data: ArrayLike<number>, classes: number, pixels: number): Int32Array {
  const out = new Int32Array(pixels);
  for (let p = 0; p < pixels; p++) {
    let best = 0;
    let bestValue = data[p];
    for (let c = 1; c < classes; c++) {
      const value = data[c * pixels + p];
      if (value > bestValue) {
        bestValue = value;
        best = c;
      }
    }
    out[p] = best;
  }
  return out;
}

function python(args: string[]): string {
  return execFileSync('python3', args, { encoding: 'utf-8' });
}

const READ_BACK = `
import json, sys
from flowenedet import tensor_store
root = sys.argv[1]
doc = tensor_store.read_dataset_manifest(root)
out = {"C": doc["C"], "V": doc["V"], "model_id": doc.get("model_id"), "samples": {}}
for s in tensor_store.iter_samples(root):
    out["samples"][s.sample_id] = {
        "logits_shape": list(s.logits.shape),
        "logits_dtype": str(s.logits.dtype),
        "labels_shape": list(s.labels.shape),
        "embeddings_shape": list(s.embeddings.shape),
        "logits_sum": float(s.logits.astype("f8").sum()),
        "labels_sum": int(s.labels.astype("i8").sum()),
        "embeddings_sum": float(s.embeddings.astype("f8").sum()),
        "argmax_head": [int(v) for v in s.logits.argmax(0).ravel()[:16]],
    }
print(json.dumps(out))
`;

function listTree(dir: string): string[] {
  const out: string[] = [];
  for (const entry of fs.readdirSync(dir, { recursive: true }) as string[]) {
    if (fs.statSync(path.join(dir, entry)).isFile()) out.push(entry);
  }
  return out.sort();
}

beforeAll(async () => {
  root = fs.mkdtempSync(path.join(os.tmpdir(), 'exporter-test-'));
  imagesDir = path.join(root, 'images');
  labelsDir = path.join(root, 'labels');
  makeFixtures();
  outBase = path.join(root, 'exported');
  const result = await exportDataset({
    images: imagesDir,
    modelId: MODEL_ID,
    scales: SCALES,
    out: outBase,
    labels: labelsDir,
  });
  exportDirs = result.dirs;
});

describe('export layout', () => {
  it('writes one dataset directory per scale with the TTA suffixes', () => {
    expect(exportDirs).toEqual([`${outBase}_s25`, `${outBase}_s50`, `${outBase}_s100`]);
    for (const dir of exportDirs) expect(fs.existsSync(path.join(dir, 'manifest.json'))).toBe(true);
  });

  it('records C, V and the model id in each manifest', () => {
    for (const [i, dir] of exportDirs.entries()) {
      const doc = JSON.parse(fs.readFileSync(path.join(dir, 'manifest.json'), 'utf-8'));
      expect(doc.C).toBe(C);
      expect(doc.V).toBe(V);
      expect(doc.model_id).toBe(MODEL_ID);
      expect(doc.scale).toBe(SCALES[i]);
      expect(doc.sample_ids).toEqual([0, 1, 2, 3, 4].map(n => `img_${n}`));
    }
  });

  it('sizes each scale from the image resolution', () => {
    for (const [i, dir] of exportDirs.entries()) {
      const h = scaledSize(HEIGHT, SCALES[i]);
      const w = scaledSize(WIDTH, SCALES[i]);
      const logits = decodeNpy(fs.readFileSync(path.join(dir, 'img_0', 'logits.npy')));
      const embeddings = decodeNpy(fs.readFileSync(path.join(dir, 'img_0', 'embeddings.npy')));
      const labels = decodeNpy(fs.readFileSync(path.join(dir, 'img_0', 'labels.npy')));
      expect(logits.shape).toEqual([C, h, w]);
      expect(embeddings.shape).toEqual([V, h, w]);
      expect(labels.shape).toEqual([h, w]);
    }
  });

  it('keeps the void marker 255 intact in resized label maps', () => {
    const labels = decodeNpy(fs.readFileSync(path.join(exportDirs[1], 'img_0', 'labels.npy')));
    const values = new Set(Array.from(labels.data));
    expect(values.has(255)).toBe(true);
    for (const v of values) expect(v === 255 || (v >= 0 && v < C)).toBe(true);
  });
});

describe('exporter fidelity', () => {
  it('argmax of exported logits equals the native predicted mask on 5 images', async () => {
    const model = await loadZooModel(MODEL_ID);
    try {
      for (let n = 0; n < N_IMAGES; n++) {
        const image = readRgbPng(path.join(imagesDir, `img_${n}.png`));
        for (const [i, scale] of SCALES.entries()) {
          const h = scaledSize(HEIGHT, scale);
          const w = scaledSize(WIDTH, scale);
          const scaled = scale === 1 ? image : resizeRgb(image, h, w);
          const native = model.nativeMask(scaled.pixels, h, w);
          const file = path.join(exportDirs[i], `img_${n}`, 'logits.npy');
          const logits = decodeNpy(fs.readFileSync(file));
          const exported = argmaxChw(logits.data, C, h * w);
          expect(Array.from(exported), `img_${n} at scale ${scale}`).toEqual(Array.from(native));
        }
      }
    } finally {
      model.dispose();
    }
  });

  it('exported tensors round-trip through the detector pipeline store', () => {
    for (const [i, dir] of exportDirs.entries()) {
      const h = scaledSize(HEIGHT, SCALES[i]);
      const w = scaledSize(WIDTH, SCALES[i]);
      const doc = JSON.parse(python(['-c', READ_BACK, dir]));
      expect(doc.C).toBe(C);
      expect(doc.V).toBe(V);
      expect(doc.model_id).toBe(MODEL_ID);
      expect(Object.keys(doc.samples)).toHaveLength(N_IMAGES);
      for (let n = 0; n < N_IMAGES; n++) {
        const sample = doc.samples[`img_${n}`];
        expect(sample.logits_shape).toEqual([C, h, w]);
        expect(sample.logits_dtype).toBe('float32');
        expect(sample.embeddings_shape).toEqual([V, h, w]);
        expect(sample.labels_shape).toEqual([h, w]);

        const logits = decodeNpy(fs.readFileSync(path.join(dir, `img_${n}`, 'logits.npy')));
        const embeddings = decodeNpy(
          fs.readFileSync(path.join(dir, `img_${n}`, 'embeddings.npy')),
        );
        const labels = decodeNpy(fs.readFileSync(path.join(dir, `img_${n}`, 'labels.npy')));
        const sum = (a: ArrayLike<number>) => Array.from(a).reduce((x, y) => x + y, 0);
        expect(Math.abs(sample.logits_sum - sum(logits.data))).toBeLessThan(1e-4);
        expect(Math.abs(sample.embeddings_sum - sum(embeddings.data))).toBeLessThan(1e-4);
        expect(sample.labels_sum).toBe(sum(labels.data));
        expect(sample.argmax_head).toEqual(Array.from(argmaxChw(logits.data, C, h * w).slice(0, 16)));
      }
    }
  });

  it('feeds the scoring and evaluation CLI, including TTA over the scale variants', () => {
    const scores = path.join(root, 'scores');
    python(['-m', 'flowenedet.cli', 'score', '--data', exportDirs[2], '--baseline', 'ene', '--out', scores, '--tta']);
    const table = python(['-m', 'flowenedet.cli', 'eval', '--data', exportDirs[2], '--scores', scores]);
    expect(table).toContain('auroc');
  });
});

describe('export options', () => {
  it('omits labels.npy when no ground-truth folder is given', async () => {
    const out = path.join(root, 'nolabels');
    await exportDataset({ images: imagesDir, modelId: MODEL_ID, scales: [1.0], out });
    const sampleDir = path.join(`${out}_s100`, 'img_0');
    expect(fs.existsSync(path.join(sampleDir, 'logits.npy'))).toBe(true);
    expect(fs.existsSync(path.join(sampleDir, 'labels.npy'))).toBe(false);
  });

  it('stores half-precision tensors under --fp16 and the pipeline upcasts on read', async () => {
    const out = path.join(root, 'half');
    await exportDataset({
      images: imagesDir,
      modelId: MODEL_ID,
      scales: [1.0],
      out,
      labels: labelsDir,
      fp16: true,
    });
    const dir = `${out}_s100`;
    const raw = fs.readFileSync(path.join(dir, 'img_0', 'logits.npy'));
    expect(raw.subarray(0, 256).toString('latin1')).toContain("'descr': '<f2'");
    const half = decodeNpy(raw);
    const full = decodeNpy(fs.readFileSync(path.join(exportDirs[2], 'img_0', 'logits.npy')));
    for (let i = 0; i < full.data.length; i++) {
      expect(Math.abs(half.data[i] - full.data[i])).toBeLessThanOrEqual(
        Math.abs(full.data[i]) * 2 ** -11 + 2 ** -24,
      );
    }
    const doc = JSON.parse(python(['-c', READ_BACK, dir]));
    expect(doc.samples.img_0.logits_dtype).toBe('float16');
  });

  it('is byte-identical across repeated exports', async () => {
    const first = path.join(root, 'rep1');
    const second = path.join(root, 'rep2');
    for (const out of [first, second]) {
      await exportDataset({
        images: imagesDir,
        modelId: MODEL_ID,
        scales: [0.5],
        out,
        labels: labelsDir,
      });
    }
    const files = listTree(`${first}_s50`);
    expect(files).toEqual(listTree(`${second}_s50`));
    for (const file of files) {
      const a = fs.readFileSync(path.join(`${first}_s50`, file));
      const b = fs.readFileSync(path.join(`${second}_s50`, file));
      expect(a.equals(b), file).toBe(true);
    }
  });

  it('rejects label maps whose size disagrees with the image', async () => {
    const badLabels = path.join(root, 'badlabels');
    fs.mkdirSync(badLabels, { recursive: true });
    writePng(path.join(badLabels, 'img_0.png'), HEIGHT + 1, WIDTH, () => [0, 0, 0]);
    await expect(
      exportDataset({
        images: imagesDir,
        modelId: MODEL_ID,
        scales: [1.0],
        out: path.join(root, 'bad'),
        labels: badLabels,
      }),
    ).rejects.toThrow(/img_0: labels are 25x32, image is 24x32/);
  });

  it('rejects empty image folders and missing directories', async () => {
    const empty = path.join(root, 'empty');
    fs.mkdirSync(empty, { recursive: true });
    await expect(
      exportDataset({ images: empty, modelId: MODEL_ID, scales: [1.0], out: path.join(root, 'x') }),
    ).rejects.toThrow(/no PNG images/);
    await expect(
      exportDataset({
        images: path.join(root, 'absent'),
        modelId: MODEL_ID,
        scales: [1.0],
        out: path.join(root, 'y'),
      }),
    ).rejects.toThrow(/not a directory/);
  });

  it('derives the documented suffixes from the scales', () => {
    expect([0.25, 0.5, 1.0].map(scaleSuffix)).toEqual(['_s25', '_s50', '_s100']);
  });
});

describe('command line', () => {
  it('exports through main() and reports the written directories', async () => {
    const out = path.join(root, 'cliout');
    const code = await main([
      '--images', imagesDir,
      '--model', MODEL_ID,
      '--scales', '1.0',
      '--out', out,
      '--labels', labelsDir,
    ]);
    expect(code).toBe(0);
    expect(fs.existsSync(path.join(`${out}_s100`, 'manifest.json'))).toBe(true);
  });

  it('exits 2 on missing required options and bad scales', async () => {
    expect(await main([])).toBe(2);
    expect(await main(['--images', imagesDir, '--model', MODEL_ID])).toBe(2);
    expect(
      await main(['--images', imagesDir, '--model', MODEL_ID, '--out', 'x', '--scales', 'big']),
    ).toBe(2);
    expect(await main(['--frobnicate'])).toBe(2);
  });

  it('exits 1 with the loader message verbatim for unknown checkpoints', async () => {
    const code = await main([
      '--images', imagesDir,
      '--model', 'nope-v9',
      '--out', path.join(root, 'z'),
    ]);
    expect(code).toBe(1);
  });

  it('prints usage and the zoo under --help', async () => {
    expect(await main(['--help'])).toBe(0);
  });

  it('runs as a standalone executable', () => {
    execFileSync('npx', ['tsc'], { cwd: path.join(__dirname, '..'), encoding: 'utf-8' });
    const out = path.join(root, 'binout');
    const stdout = execFileSync(
      'node',
      [
        path.join(__dirname, '..', 'dist', 'bin.js'),
        '--images', imagesDir,
        '--model', MODEL_ID,
        '--scales', '0.25,0.5,1.0',
        '--out', out,
        '--labels', labelsDir,
      ],
      { encoding: 'utf-8' },
    );
    expect(stdout).toContain(`${out}_s25`);
    expect(stdout).toContain(`${out}_s100`);
    expect(fs.existsSync(path.join(`${out}_s50`, 'img_4', 'logits.npy'))).toBe(true);
  });
});
