/**
 * NPY v1.0 serialization, little-endian C-order only.
 *
 * Layout: 6-byte magic "\x93NUMPY", version bytes 1.0, a uint16-LE header
 * length, then a Python dict literal padded with spaces (terminated by one
 * newline) so the payload starts on a 64-byte boundary.
 */

export type NpyDtype = '<f2' | '<f4' | '<f8' | '<i4';

export type NpyData = Float32Array | Float64Array | Int32Array;

export interface NpyArray {
  dtype: NpyDtype;
  shape: number[];
  /** Decoded values; <f2 payloads are widened to Float32Array. */
  data: NpyData;
}

const MAGIC = Buffer.from('\x93NUMPY', 'latin1');

const ITEM_SIZE: Record<NpyDtype, number> = {
  '<f2': 2,
  '<f4': 4,
  '<f8': 8,
  '<i4': 4,
};

function shapeLiteral(shape: number[]): string {
  if (shape.length === 0) return '()';
  if (shape.length === 1) return `(${shape[0]},)`;
  return `(${shape.join(', ')})`;
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Round a float32 to IEEE 754 binary16 bits (round-to-nearest-even). */
export function floatToHalfBits(value: number): number {
  const f32 = new Float32Array(1);
  const u32 = new Uint32Array(f32.buffer);
  f32[0] = value;
  const x = u32[0];
  const sign = (x >>> 16) & 0x8000;
  const exponent = (x >>> 23) & 0xff;
  const mantissa = x & 0x7fffff;
  if (exponent === 0xff) {
    // Infinity or NaN; keep a quiet-NaN mantissa bit if any was set.
    return sign | 0x7c00 | (mantissa ? 0x200 : 0);
  }
  // Re-bias from 127 to 15.
  const e = exponent - 127 + 15;
  if (e >= 0x1f) return sign | 0x7c00;
  if (e <= 0) {
    if (e < -10) return sign;
    // Subnormal: shift the implicit leading 1 into the mantissa,
    // rounding the dropped bits to nearest even. A carry out of the
    // mantissa lands on the smallest normal, which is correct.
    const m = mantissa | 0x800000;
    const shift = 14 - e;
    let half = m >>> shift;
    const remainder = m & ((1 << shift) - 1);
    const halfway = 1 << (shift - 1);
    if (remainder > halfway || (remainder === halfway && (half & 1) === 1)) half += 1;
    return sign | half;
  }
  let half = sign | (e << 10) | (mantissa >>> 13);
  // Round to nearest even on the 13 dropped bits; carries may bump the
  // exponent, overflowing to infinity exactly when they should.
  const remainder = mantissa & 0x1fff;
  if (remainder > 0x1000 || (remainder === 0x1000 && (half & 1) === 1)) half += 1;
  return half;
}

export function halfBitsToFloat(bits: number): number {
  const sign = (bits & 0x8000) ? -1 : 1;
  const exponent = (bits >>> 10) & 0x1f;
  const mantissa = bits & 0x3ff;
  if (exponent === 0) return sign * mantissa * 2 ** -24;
  if (exponent === 0x1f) return mantissa ? NaN : sign * Infinity;
  return sign * (1024 + mantissa) * 2 ** (exponent - 25);
}

export function encodeNpy(data: ArrayLike<number>, shape: number[], dtype: NpyDtype): Buffer {
  const count = elementCount(shape);
  if (data.length !== count) {
    throw new Error(`npy: shape (${shape.join(', ')}) wants ${count} values, got ${data.length}`);
  }
  const dict = `{'descr': '${dtype}', 'fortran_order': False, 'shape': ${shapeLiteral(shape)}, }`;
  const unpadded = MAGIC.length + 4 + dict.length + 1;
  const padding = (64 - (unpadded % 64)) % 64;
  const header = dict + ' '.repeat(padding) + '\n';

  const payload = Buffer.alloc(count * ITEM_SIZE[dtype]);
  for (let i = 0; i < count; i++) {
    const v = data[i];
    switch (dtype) {
      case '<f2':
        payload.writeUInt16LE(floatToHalfBits(v), i * 2);
        break;
      case '<f4':
        payload.writeFloatLE(Math.fround(v), i * 4);
        break;
      case '<f8':
        payload.writeDoubleLE(v, i * 8);
        break;
      case '<i4':
        payload.writeInt32LE(v | 0, i * 4);
        break;
    }
  }

  const out = Buffer.alloc(MAGIC.length + 4 + header.length + payload.length);
  MAGIC.copy(out, 0);
  out.writeUInt8(1, 6);
  out.writeUInt8(0, 7);
  out.writeUInt16LE(header.length, 8);
  out.write(header, 10, 'latin1');
  payload.copy(out, 10 + header.length);
  return out;
}

export function decodeNpy(buf: Buffer): NpyArray {
  if (!buf.subarray(0, 6).equals(MAGIC)) throw new Error('npy: bad magic');
  if (buf[6] !== 1 || buf[7] !== 0) throw new Error(`npy: unsupported version ${buf[6]}.${buf[7]}`);
  const headerLen = buf.readUInt16LE(8);
  const header = buf.subarray(10, 10 + headerLen).toString('latin1');

  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeText = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (!descr || !fortran || shapeText === undefined) {
    throw new Error(`npy: malformed header ${JSON.stringify(header)}`);
  }
  if (fortran === 'True') throw new Error('npy: fortran_order arrays not supported');
  if (!(descr in ITEM_SIZE)) throw new Error(`npy: unsupported dtype ${descr}`);
  const dtype = descr as NpyDtype;
  const shape = shapeText
    .split(',')
    .map(s => s.trim())
    .filter(s => s.length > 0)
    .map(Number);

  const count = elementCount(shape);
  const body = buf.subarray(10 + headerLen);
  if (body.length !== count * ITEM_SIZE[dtype]) {
    throw new Error(`npy: payload is ${body.length} bytes, expected ${count * ITEM_SIZE[dtype]}`);
  }
  let data: NpyData;
  switch (dtype) {
    case '<f2': {
      const wide = new Float32Array(count);
      for (let i = 0; i < count; i++) wide[i] = halfBitsToFloat(body.readUInt16LE(i * 2));
      data = wide;
      break;
    }
    case '<f4': {
      const out = new Float32Array(count);
      for (let i = 0; i < count; i++) out[i] = body.readFloatLE(i * 4);
      data = out;
      break;
    }
    case '<f8': {
      const out = new Float64Array(count);
      for (let i = 0; i < count; i++) out[i] = body.readDoubleLE(i * 8);
      data = out;
      break;
    }
    case '<i4': {
      const out = new Int32Array(count);
      for (let i = 0; i < count; i++) out[i] = body.readInt32LE(i * 4);
      data = out;
      break;
    }
  }
  return { dtype, shape, data };
}
