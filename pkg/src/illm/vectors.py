"""Golden test vectors and the fuzz corpus for coder conformance.

Cases are generated by an integer-only PRNG (splitmix64) so alternative
backend implementations in any language can regenerate the identical
case set from the seed and compare output bytes.  The committed corpus
stores only the expected encodings; the case parameters are re-derived.

Run ``python -m illm.vectors --out-dir golden`` to regenerate.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .entropy import CDFTable, range_encode

_M64 = (1 << 64) - 1
GOLDEN_SEED = 0x494C4C4D  # spells the container magic
DEFAULT_CASES = 10_000
GOLDEN_JSON_CASES = 48
CORPUS_MAGIC = b"ILFZ"


class SplitMix64:
    """Deterministic 64-bit generator, trivially portable across languages."""

    def __init__(self, seed: int):
        self.state = seed & _M64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return (z ^ (z >> 31)) & _M64

    def below(self, n: int) -> int:
        return self.next_u64() % n


def gen_case(index: int, seed: int = GOLDEN_SEED) -> dict:
    """Derive one fuzz case (tables + symbols) from the seed and index."""
    rng = SplitMix64((seed + index * 0x9E3779B9) & _M64)
    precision = 8 + rng.below(9)  # 8..16
    total = 1 << precision
    n_rows = 1 + rng.below(6)
    has_escape = rng.below(2) == 1
    rows, offsets, real_bins = [], [], []
    for _ in range(n_rows):
        max_bins = min(64, total)
        n_bins = 2 + rng.below(max_bins - 1)
        counts = [1] * n_bins
        remaining = total - n_bins
        while remaining > 0:
            chunk = 1 + rng.below(remaining)
            counts[rng.below(n_bins)] += chunk
            remaining -= chunk
        cum = [0]
        for c in counts:
            cum.append(cum[-1] + c)
        rows.append(cum)
        offsets.append(rng.below(2001) - 1000)
        real_bins.append(n_bins - (1 if has_escape else 0))
    n_syms = rng.below(301)
    row_index, symbols = [], []
    for _ in range(n_syms):
        r = rng.below(n_rows)
        row_index.append(r)
        if has_escape and rng.below(16) == 0:
            symbols.append(rng.below(200_001) - 100_000)
        else:
            symbols.append(offsets[r] + rng.below(real_bins[r]))
    return {
        "index": index,
        "precision": precision,
        "has_escape": has_escape,
        "rows": rows,
        "offsets": offsets,
        "row_index": row_index,
        "symbols": symbols,
    }


def case_table(case: dict) -> CDFTable:
    return CDFTable(
        [list(r) for r in case["rows"]],
        list(case["offsets"]),
        np.asarray(case["row_index"], dtype=np.int64),
        precision=case["precision"],
        has_escape=case["has_escape"],
    )


def encode_case(case: dict) -> bytes:
    return range_encode(np.asarray(case["symbols"], dtype=np.int64), case_table(case))


def write_corpus(path, n_cases: int = DEFAULT_CASES, seed: int = GOLDEN_SEED) -> str:
    """Write the binary corpus of expected encodings; returns its sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    blob += CORPUS_MAGIC
    blob += struct.pack("<IQ", n_cases, seed)
    for i in range(n_cases):
        data = encode_case(gen_case(i, seed))
        blob += struct.pack("<I", len(data))
        blob += data
    path.write_bytes(bytes(blob))
    return hashlib.sha256(bytes(blob)).hexdigest()


def read_corpus(path) -> tuple[int, int, list[bytes]]:
    data = Path(path).read_bytes()
    if data[:4] != CORPUS_MAGIC:
        raise ValueError("bad corpus magic")
    n_cases, seed = struct.unpack_from("<IQ", data, 4)
    pos = 16
    streams = []
    for _ in range(n_cases):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        streams.append(data[pos : pos + length])
        pos += length
    return n_cases, seed, streams


def write_golden_json(path, n_cases: int = GOLDEN_JSON_CASES, seed: int = GOLDEN_SEED) -> str:
    """Human-readable golden vectors with full case parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cases = []
    for i in range(n_cases):
        case = gen_case(i, seed)
        case["expected_hex"] = encode_case(case).hex()
        cases.append(case)
    payload = {"seed": seed, "cases": cases}
    text = json.dumps(payload, indent=1, sort_keys=True)
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="regenerate golden coder vectors")
    parser.add_argument("--out-dir", default="golden")
    parser.add_argument("--cases", type=int, default=DEFAULT_CASES)
    args = parser.parse_args(argv)
    out = Path(args.out_dir)
    corpus_hash = write_corpus(out / "fuzz_corpus.bin", args.cases)
    golden_hash = write_golden_json(out / "entropy_vectors.json")
    manifest = {
        "seed": GOLDEN_SEED,
        "corpus_cases": args.cases,
        "corpus_sha256": corpus_hash,
        "golden_sha256": golden_hash,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(json.dumps(manifest))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
