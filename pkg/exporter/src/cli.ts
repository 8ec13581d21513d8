/**
 * fed-export --images DIR --model ID --scales 0.25,0.5,1.0 --out DIR
 *            [--labels DIR] [--fp16]
 *
 * Exit codes mirror the detector CLI: 0 success, 1 runtime failure
 * (missing inputs, unknown checkpoint - the loader's message is printed
 * verbatim), 2 usage errors.
 */

import { parseArgs } from 'node:util';

import { exportDataset } from './export';
import { MODEL_ZOO } from './zoo';

const USAGE =
  'usage: fed-export --images DIR --model ID --scales 0.25,0.5,1.0 --out DIR [--labels DIR] [--fp16]';

export function parseScales(text: string): number[] {
  return text.split(',').map(part => {
    const value = Number(part.trim());
    if (!Number.isFinite(value) || value <= 0) {
      throw new Error(`bad scale '${part.trim()}' (want positive numbers, e.g. 0.25,0.5,1.0)`);
    }
    return value;
  });
}

export async function main(argv: string[]): Promise<number> {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        images: { type: 'string' },
        model: { type: 'string' },
        scales: { type: 'string', default: '0.25,0.5,1.0' },
        out: { type: 'string' },
        labels: { type: 'string' },
        fp16: { type: 'boolean', default: false },
        help: { type: 'boolean', default: false },
      },
      allowPositionals: false,
    });
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    console.error(USAGE);
    return 2;
  }
  const values = parsed.values;
  if (values.help) {
    console.log(USAGE);
    console.log(`models: ${Object.keys(MODEL_ZOO).sort().join(', ')}`);
    return 0;
  }
  for (const required of ['images', 'model', 'out'] as const) {
    if (!values[required]) {
      console.error(`missing required option --${required}`);
      console.error(USAGE);
      return 2;
    }
  }
  let scales: number[];
  try {
    scales = parseScales(values.scales as string);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }

  try {
    const result = await exportDataset({
      images: values.images as string,
      modelId: values.model as string,
      scales,
      out: values.out as string,
      labels: values.labels,
      fp16: values.fp16 as boolean,
    });
    for (const dir of result.dirs) {
      console.log(`wrote ${dir} (${result.sampleIds.length} samples)`);
    }
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}
