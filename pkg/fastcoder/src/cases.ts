/**
 * Deterministic fuzz-case generation, mirrored field-for-field with the
 * reference implementation so both sides derive identical cases from a
 * shared seed (splitmix64, integer-only).
 */

import { CdfSpec } from "./rangecoder";

const M64 = (1n << 64n) - 1n;

export const GOLDEN_SEED = 0x494c4c4d; // spells the container magic

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint | number) {
    this.state = BigInt(seed) & M64;
  }

  nextU64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & M64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & M64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & M64;
    return (z ^ (z >> 31n)) & M64;
  }

  below(n: number): number {
    return Number(this.nextU64() % BigInt(n));
  }
}

export interface FuzzCase {
  index: number;
  spec: CdfSpec;
  symbols: number[];
}

export function genCase(index: number, seed: number = GOLDEN_SEED): FuzzCase {
  const rng = new SplitMix64((BigInt(seed) + BigInt(index) * 0x9e3779b9n) & M64);
  const precision = 8 + rng.below(9);
  const total = 1 << precision;
  const nRows = 1 + rng.below(6);
  const hasEscape = rng.below(2) === 1;
  const rows: number[][] = [];
  const offsets: number[] = [];
  const realBins: number[] = [];
  for (let r = 0; r < nRows; r++) {
    const maxBins = Math.min(64, total);
    const nBins = 2 + rng.below(maxBins - 1);
    const counts = new Array<number>(nBins).fill(1);
    let remaining = total - nBins;
    while (remaining > 0) {
      const chunk = 1 + rng.below(remaining);
      counts[rng.below(nBins)] += chunk;
      remaining -= chunk;
    }
    const cum = [0];
    for (const c of counts) cum.push(cum[cum.length - 1] + c);
    rows.push(cum);
    offsets.push(rng.below(2001) - 1000);
    realBins.push(nBins - (hasEscape ? 1 : 0));
  }
  const nSyms = rng.below(301);
  const rowIndex: number[] = [];
  const symbols: number[] = [];
  for (let i = 0; i < nSyms; i++) {
    const r = rng.below(nRows);
    rowIndex.push(r);
    if (hasEscape && rng.below(16) === 0) {
      symbols.push(rng.below(200001) - 100000);
    } else {
      symbols.push(offsets[r] + rng.below(realBins[r]));
    }
  }
  return {
    index,
    spec: { precision, has_escape: hasEscape, rows, offsets, row_index: rowIndex },
    symbols,
  };
}
