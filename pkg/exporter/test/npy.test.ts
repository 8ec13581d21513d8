import { describe, expect, it } from 'vitest';

import { decodeNpy, encodeNpy, floatToHalfBits, halfBitsToFloat } from '../src/npy';

describe('npy header', () => {
  it('starts with the v1.0 magic and pads the header to a 64-byte boundary', () => {
    const buf = encodeNpy([1.5, -2.0], [2], '<f4');
    expect(buf.subarray(0, 8)).toEqual(Buffer.from('\x93NUMPY\x01\x00', 'latin1'));
    const headerLen = buf.readUInt16LE(8);
    expect((10 + headerLen) % 64).toBe(0);
    const header = buf.subarray(10, 10 + headerLen).toString('latin1');
    expect(header).toContain("'descr': '<f4'");
    expect(header).toContain("'fortran_order': False");
    expect(header.endsWith('\n')).toBe(true);
  });

  it('writes 1-tuples with a trailing comma and reads them back', () => {
    const buf = encodeNpy([7], [1], '<i4');
    expect(buf.toString('latin1')).toContain('(1,)');
    expect(decodeNpy(buf).shape).toEqual([1]);
  });

  it('rejects arrays whose length disagrees with the shape', () => {
    expect(() => encodeNpy([1, 2, 3], [2, 2], '<f4')).toThrow(/wants 4 values, got 3/);
  });

  it('rejects foreign payloads', () => {
    expect(() => decodeNpy(Buffer.from('PK\x03\x04junk', 'latin1'))).toThrow(/bad magic/);
  });
});

describe('npy round trips', () => {
  it('keeps float32 payloads bit-exact', () => {
    const values = new Float32Array([0, -0, 1.5, -2.25, 3.4028235e38, 1.1754944e-38, Math.PI]);
    const out = decodeNpy(encodeNpy(values, [7], '<f4'));
    expect(out.dtype).toBe('<f4');
    expect(Array.from(out.data)).toEqual(Array.from(values));
  });

  it('keeps float64 payloads bit-exact', () => {
    const values = [0.1, -1e300, 2 ** -1074, Math.E];
    const out = decodeNpy(encodeNpy(values, [2, 2], '<f8'));
    expect(out.shape).toEqual([2, 2]);
    expect(Array.from(out.data)).toEqual(values);
  });

  it('keeps int32 payloads exact including the extremes', () => {
    const values = [0, -1, 2147483647, -2147483648];
    const out = decodeNpy(encodeNpy(values, [4], '<i4'));
    expect(Array.from(out.data)).toEqual(values);
  });

  it('keeps half-representable values exact through <f2', () => {
    const values = [0, 0.5, -1.25, 2048, -65504, 2 ** -24];
    const out = decodeNpy(encodeNpy(values, [6], '<f2'));
    expect(out.dtype).toBe('<f2');
    expect(Array.from(out.data)).toEqual(values);
  });

  it('quantizes general floats to <f2 within half precision', () => {
    const values = [Math.PI, -0.1, 123.456, 1e-5];
    const out = decodeNpy(encodeNpy(values, [4], '<f2'));
    values.forEach((v, i) => {
      expect(Math.abs(out.data[i] - v)).toBeLessThanOrEqual(Math.abs(v) * 2 ** -11 + 2 ** -24);
    });
  });
});

describe('half-precision conversion', () => {
  it('handles signed zero, infinities and NaN', () => {
    expect(floatToHalfBits(0)).toBe(0x0000);
    expect(floatToHalfBits(-0)).toBe(0x8000);
    expect(floatToHalfBits(Infinity)).toBe(0x7c00);
    expect(floatToHalfBits(-Infinity)).toBe(0xfc00);
    expect(Number.isNaN(halfBitsToFloat(floatToHalfBits(NaN)))).toBe(true);
  });

  it('overflows to infinity above the half range', () => {
    expect(floatToHalfBits(65520)).toBe(0x7c00);
    expect(floatToHalfBits(1e10)).toBe(0x7c00);
  });

  it('flushes tiny magnitudes to zero and keeps subnormals', () => {
    expect(floatToHalfBits(1e-10)).toBe(0x0000);
    expect(halfBitsToFloat(floatToHalfBits(2 ** -24))).toBe(2 ** -24);
    expect(halfBitsToFloat(floatToHalfBits(3 * 2 ** -24))).toBe(3 * 2 ** -24);
  });

  it('rounds to nearest even at halfway points', () => {
    // 2049 sits exactly between the representable 2048 and 2050.
    expect(halfBitsToFloat(floatToHalfBits(2049))).toBe(2048);
    expect(halfBitsToFloat(floatToHalfBits(2051))).toBe(2052);
  });
});
