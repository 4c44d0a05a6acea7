/**
 * Carry-less range coder, bit-exact with the Python reference.
 *
 * 32-bit state with byte-wise renormalization: the top byte is emitted
 * once settled, and the range is force-shrunk at a byte boundary when it
 * falls below the renormalization bound, so carries never propagate.
 * All arithmetic stays below 2^53 so plain doubles are exact; quantities
 * known to fit in 31 bits use `|0` truncation instead of Math.floor.
 *
 * Tables arrive as flat integer arrays (cumulative rows + per-symbol row
 * indices); no floating-point CDF math happens on this side, which is
 * what makes byte-exactness across languages trivial to guarantee.
 *
 * Coder state lives in local variables inside the encode/decode loops
 * (not object fields) — that alone is worth 2-3x in V8.
 */

const M32 = 0x100000000;
const TOP = 1 << 24;
const ESCAPE_RAW_BYTES = 4;

export interface CdfSpec {
  precision: number;
  has_escape: boolean;
  rows: number[][]; // cumulative, each 0..2^precision strictly increasing
  offsets: number[];
  row_index: number[] | Int32Array;
}

export class TableError extends Error {}
export class StreamError extends Error {}

function renormBound(precision: number): number {
  return 1 << Math.max(16, precision);
}

export function validateSpec(spec: CdfSpec): void {
  if (spec.precision < 8 || spec.precision > 24) {
    throw new TableError(`precision ${spec.precision} outside [8, 24]`);
  }
  const total = 1 << spec.precision;
  if (spec.rows.length !== spec.offsets.length) {
    throw new TableError("rows/offsets length mismatch");
  }
  for (const row of spec.rows) {
    if (row[0] !== 0 || row[row.length - 1] !== total) {
      throw new TableError("CDF row must run from 0 to 2^precision");
    }
    for (let i = 1; i < row.length; i++) {
      if (row[i] <= row[i - 1]) throw new TableError("CDF row must be strictly increasing");
    }
  }
  for (let i = 0; i < spec.row_index.length; i++) {
    const r = spec.row_index[i] as number;
    if (r < 0 || r >= spec.rows.length) throw new TableError("row index out of range");
  }
}

function uniformByteRow(precision: number): number[] {
  const step = (1 << precision) >> 8;
  const row = new Array<number>(257);
  for (let i = 0; i <= 256; i++) row[i] = i * step;
  return row;
}

function zigzag(k: number): number {
  return k >= 0 ? 2 * k : -2 * k - 1;
}

function unzigzag(u: number): number {
  return u % 2 === 0 ? u / 2 : -((u + 1) / 2);
}

class ByteSink {
  buf = new Uint8Array(4096);
  len = 0;

  push(b: number): void {
    if (this.len === this.buf.length) {
      const grown = new Uint8Array(this.buf.length * 2);
      grown.set(this.buf);
      this.buf = grown;
    }
    this.buf[this.len++] = b;
  }

  bytes(): Uint8Array {
    return this.buf.slice(0, this.len);
  }
}

export function fastEncode(symbols: ArrayLike<number>, spec: CdfSpec): Uint8Array {
  validateSpec(spec);
  if (symbols.length !== spec.row_index.length) {
    throw new TableError("symbol count does not match the table's row index");
  }
  const total = 1 << spec.precision;
  const bot = renormBound(spec.precision);
  const byteRow = uniformByteRow(spec.precision);
  const { rows, offsets, row_index: rowIndex, has_escape: hasEscape } = spec;
  const out = new ByteSink();

  let low = 0;
  let range = M32 - 1;

  const n = symbols.length;
  for (let i = 0; i < n; i++) {
    const ri = rowIndex[i] as number;
    const row = rows[ri];
    const nbins = row.length - 1;
    const realBins = nbins - (hasEscape ? 1 : 0);
    const idx = symbols[i] - offsets[ri];

    let cumLo: number;
    let cumHi: number;
    let escaped = false;
    if (idx >= 0 && idx < realBins) {
      cumLo = row[idx];
      cumHi = row[idx + 1];
    } else if (hasEscape) {
      const sym = symbols[i];
      if (sym < -(2 ** 31) || sym >= 2 ** 31) {
        throw new TableError(`symbol ${sym} too large for escape coding`);
      }
      cumLo = row[nbins - 1];
      cumHi = row[nbins];
      escaped = true;
    } else {
      throw new TableError(`symbol ${symbols[i]} outside table range without escape`);
    }

    let r = (range / total) | 0;
    low += r * cumLo;
    range = r * (cumHi - cumLo);
    for (;;) {
      const settled = ((low / TOP) | 0) === (((low + range) / TOP) | 0);
      if (!settled) {
        if (range >= bot) break;
        range = (bot - (low % bot)) % bot;
      }
      out.push((low / 0x1000000) | 0);
      low = (low % 0x1000000) * 256;
      range *= 256;
    }

    if (escaped) {
      const u = zigzag(symbols[i]);
      for (let shift = 8 * (ESCAPE_RAW_BYTES - 1); shift >= 0; shift -= 8) {
        const b = Math.floor(u / 2 ** shift) % 256;
        r = (range / total) | 0;
        low += r * byteRow[b];
        range = r * (byteRow[b + 1] - byteRow[b]);
        for (;;) {
          const settled = ((low / TOP) | 0) === (((low + range) / TOP) | 0);
          if (!settled) {
            if (range >= bot) break;
            range = (bot - (low % bot)) % bot;
          }
          out.push((low / 0x1000000) | 0);
          low = (low % 0x1000000) * 256;
          range *= 256;
        }
      }
    }
  }
  for (let i = 0; i < 4; i++) {
    out.push((low / 0x1000000) | 0);
    low = (low % 0x1000000) * 256;
  }
  return out.bytes();
}

export function fastDecode(data: Uint8Array, spec: CdfSpec, n: number): Int32Array {
  validateSpec(spec);
  if (n !== spec.row_index.length) {
    throw new TableError("symbol count does not match the table's row index");
  }
  const total = 1 << spec.precision;
  const bot = renormBound(spec.precision);
  const byteRow = uniformByteRow(spec.precision);
  const { rows, offsets, row_index: rowIndex, has_escape: hasEscape } = spec;
  const out = new Int32Array(n);

  let low = 0;
  let range = M32 - 1;
  let code = 0;
  let pos = 0;
  const len = data.length;
  for (let i = 0; i < 4; i++) {
    if (pos >= len) throw new StreamError("truncated entropy stream");
    code = code * 256 + data[pos++];
  }

  const step = (row: number[]): number => {
    const r = (range / total) | 0;
    const val = (((code - low) % M32) + M32) % M32;
    let target = (val / r) | 0;
    if (target > total - 1) target = total - 1;
    let lo = 0;
    let hi = row.length - 1;
    while (hi - lo > 1) {
      const mid = (lo + hi) >> 1;
      if (row[mid] <= target) lo = mid;
      else hi = mid;
    }
    low += r * row[lo];
    range = r * (row[lo + 1] - row[lo]);
    for (;;) {
      const settled = ((low / TOP) | 0) === (((low + range) / TOP) | 0);
      if (!settled) {
        if (range >= bot) break;
        range = (bot - (low % bot)) % bot;
      }
      if (pos >= len) throw new StreamError("truncated entropy stream");
      code = (code % 0x1000000) * 256 + data[pos++];
      low = (low % 0x1000000) * 256;
      range *= 256;
    }
    return lo;
  };

  for (let i = 0; i < n; i++) {
    const ri = rowIndex[i] as number;
    const row = rows[ri];
    const nbins = row.length - 1;
    const idx = step(row);
    if (hasEscape && idx === nbins - 1) {
      let u = 0;
      for (let j = 0; j < ESCAPE_RAW_BYTES; j++) {
        u = u * 256 + step(byteRow);
      }
      out[i] = unzigzag(u);
    } else {
      out[i] = idx + offsets[ri];
    }
  }
  return out;
}
