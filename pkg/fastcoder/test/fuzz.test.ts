/** Round-trip fuzzing beyond the committed corpus, plus error paths. */

import { describe, expect, it } from "vitest";

import { SplitMix64, genCase } from "../src/cases";
import { StreamError, TableError, fastDecode, fastEncode } from "../src/rangecoder";

describe("roundtrip fuzz", () => {
  it("decode(encode(x)) is identity on 2,000 fresh cases", () => {
    for (let i = 0; i < 2_000; i++) {
      const c = genCase(i, 0xc0ffee);
      const data = fastEncode(c.symbols, c.spec);
      const back = fastDecode(data, c.spec, c.symbols.length);
      expect(Array.from(back)).toEqual(c.symbols);
    }
  });

  it("splitmix64 matches the canonical sequence", () => {
    const rng = new SplitMix64(0);
    expect(rng.nextU64()).toBe(0xe220a8397b1dcdafn);
    expect(rng.nextU64()).toBe(0x6e789e6aa1b965f4n);
  });

  it("rejects out-of-range symbols without escape", () => {
    const spec = {
      precision: 16,
      has_escape: false,
      rows: [[0, 30000, 65536]],
      offsets: [0],
      row_index: [0],
    };
    expect(() => fastEncode([5], spec)).toThrow(TableError);
  });

  it("rejects malformed tables", () => {
    expect(() =>
      fastEncode([0], {
        precision: 16,
        has_escape: false,
        rows: [[0, 70000]],
        offsets: [0],
        row_index: [0],
      })
    ).toThrow(TableError);
    expect(() =>
      fastEncode([0], {
        precision: 30,
        has_escape: false,
        rows: [[0, 1 << 30]],
        offsets: [0],
        row_index: [0],
      })
    ).toThrow(TableError);
  });

  it("raises on truncated streams", () => {
    const c = genCase(3, 0xc0ffee);
    if (c.symbols.length === 0) throw new Error("bad fixture");
    const data = fastEncode(c.symbols, c.spec);
    expect(() => fastDecode(data.subarray(0, 2), c.spec, c.symbols.length)).toThrow(
      StreamError
    );
  });
});
