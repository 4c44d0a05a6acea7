/** Byte-exact conformance against the committed reference corpus. */

import { readFileSync } from "fs";
import { resolve } from "path";
import { describe, expect, it } from "vitest";

import { genCase } from "../src/cases";
import { fastDecode, fastEncode } from "../src/rangecoder";

const GOLDEN_DIR = resolve(__dirname, "..", "..", "golden");

interface Corpus {
  nCases: number;
  seed: number;
  streams: Uint8Array[];
}

function readCorpus(): Corpus {
  const data = readFileSync(resolve(GOLDEN_DIR, "fuzz_corpus.bin"));
  expect(data.subarray(0, 4).toString("ascii")).toBe("ILFZ");
  const nCases = data.readUInt32LE(4);
  const seed = Number(data.readBigUInt64LE(8));
  const streams: Uint8Array[] = [];
  let pos = 16;
  for (let i = 0; i < nCases; i++) {
    const len = data.readUInt32LE(pos);
    pos += 4;
    streams.push(new Uint8Array(data.subarray(pos, pos + len)));
    pos += len;
  }
  expect(pos).toBe(data.length);
  return { nCases, seed, streams };
}

describe("corpus conformance", () => {
  it("reproduces all 10,000 reference encodings byte-for-byte", () => {
    const corpus = readCorpus();
    expect(corpus.nCases).toBe(10_000);
    for (let i = 0; i < corpus.nCases; i++) {
      const c = genCase(i, corpus.seed);
      const encoded = fastEncode(c.symbols, c.spec);
      expect(Buffer.from(encoded).equals(Buffer.from(corpus.streams[i]))).toBe(true);
    }
  });

  it("decodes every corpus stream back to the generated symbols", () => {
    const corpus = readCorpus();
    for (let i = 0; i < corpus.nCases; i += 7) {
      const c = genCase(i, corpus.seed);
      const decoded = fastDecode(corpus.streams[i], c.spec, c.symbols.length);
      expect(Array.from(decoded)).toEqual(c.symbols);
    }
  });

  it("matches the committed golden vectors with full parameters", () => {
    const payload = JSON.parse(
      readFileSync(resolve(GOLDEN_DIR, "entropy_vectors.json"), "utf-8")
    );
    for (const c of payload.cases) {
      const encoded = fastEncode(c.symbols, {
        precision: c.precision,
        has_escape: c.has_escape,
        rows: c.rows,
        offsets: c.offsets,
        row_index: c.row_index,
      });
      expect(Buffer.from(encoded).toString("hex")).toBe(c.expected_hex);
    }
  });

  it("empty input encodes to the reference empty stream", () => {
    // the reference coder flushes four zero bytes for an empty input
    const spec = {
      precision: 16,
      has_escape: false,
      rows: [[0, 65536]],
      offsets: [0],
      row_index: [] as number[],
    };
    const data = fastEncode([], spec);
    expect(Array.from(data)).toEqual([0, 0, 0, 0]);
    expect(Array.from(fastDecode(data, spec, 0))).toEqual([]);
  });
});
