"""Range coder, quantized CDF tables, and the bitstream container format.

The coder is a 32-bit carry-less range coder with byte-wise output
(Subbotin style).  Renormalization emits the top byte whenever it has
settled, and force-shrinks the range at a byte boundary when it falls
below the renormalization bound, so carries never propagate into
already-emitted bytes.  All coder state is plain integer arithmetic,
which makes the output bytes deterministic across platforms.

Symbols outside a table's tabulated range are coded through a reserved
escape slot followed by a 4-byte zigzag representation of the raw value,
coded against a uniform byte table.  This keeps tables bounded while
supporting the unbounded integer support of the Gaussian/logistic
models.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import logistic as _logistic
from scipy.stats import norm as _norm

from .errors import ContainerError, DomainError, StreamCorruptionError

_MASK32 = 0xFFFFFFFF
_TOP = 1 << 24

#: Log-spaced grid of coding scales shared by encoder and decoder.  The
#: hyper path predicts continuous scales; snapping them onto this grid is
#: what lets both sides derive bit-identical tables.
SCALE_GRID_SIZE = 64
SCALE_GRID_MIN = 0.11
SCALE_GRID_MAX = 256.0
SCALE_GRID = np.geomspace(SCALE_GRID_MIN, SCALE_GRID_MAX, SCALE_GRID_SIZE)

DEFAULT_PRECISION = 16
DEFAULT_TAIL_MASS = 1e-4

_ESCAPE_RAW_BYTES = 4  # zigzag payload width for escape-coded symbols

CONTAINER_MAGIC = b"ILLM"
CONTAINER_VERSION = 1


def snap_scales(scales: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Round scales onto the shared log-spaced grid.

    Returns (snapped values, grid indices).  Values are clamped into the
    grid range first; the index formula is plain rounding in log space so
    encoder and decoder always agree.
    """
    scales = np.clip(np.asarray(scales, dtype=np.float64), SCALE_GRID_MIN, SCALE_GRID_MAX)
    step = np.log(SCALE_GRID_MAX / SCALE_GRID_MIN) / (SCALE_GRID_SIZE - 1)
    idx = np.rint(np.log(scales / SCALE_GRID_MIN) / step).astype(np.int64)
    idx = np.clip(idx, 0, SCALE_GRID_SIZE - 1)
    return SCALE_GRID[idx], idx


def _fix_zero_bins(pmf: np.ndarray, precision: int) -> np.ndarray:
    """Bump zero-width bins to one count, stealing from the largest bin."""
    if len(pmf) > (1 << precision):
        raise DomainError(f"{len(pmf)} bins cannot all be nonzero at precision {precision}")
    pmf = pmf.copy()
    while True:
        zeros = np.flatnonzero(pmf <= 0)
        if zeros.size == 0:
            return pmf
        j = int(np.argmax(pmf))
        pmf[zeros[0]] += 1
        pmf[j] -= 1


def quantize_pmf(cum_real: np.ndarray, precision: int) -> np.ndarray:
    """Turn a real cumulative distribution into integer bin counts.

    The cumulative values are rounded to the integer lattice (which keeps
    large bins accurate to +-1 count), then zero-width bins are fixed up.
    """
    total = 1 << precision
    cum = np.rint(np.asarray(cum_real, dtype=np.float64) * total).astype(np.int64)
    cum[0] = 0
    cum[-1] = total
    return _fix_zero_bins(np.diff(cum), precision)


@dataclass
class CDFTable:
    """Per-symbol quantized CDF rows for the range coder.

    ``rows`` holds cumulative counts (each strictly increasing from 0 to
    ``2**precision``); ``row_offsets[r]`` is the integer value of the first
    symbol of row ``r``; ``row_index[i]`` selects the row used for the
    i-th symbol of a stream.  When ``has_escape`` is set, the last bin of
    every row is the escape slot rather than an ordinary symbol.
    """

    rows: list[list[int]]
    row_offsets: list[int]
    row_index: np.ndarray
    precision: int = DEFAULT_PRECISION
    has_escape: bool = True
    offset: int = field(init=False, default=0)
    max_symbol: int = field(init=False, default=0)

    def __post_init__(self):
        if not self.rows or len(self.rows) != len(self.row_offsets):
            raise DomainError("table needs at least one row with matching offsets")
        total = 1 << self.precision
        for row in self.rows:
            if row[0] != 0 or row[-1] != total:
                raise DomainError("CDF row must run from 0 to 2**precision")
            if any(b <= a for a, b in zip(row, row[1:])):
                raise DomainError("CDF row must be strictly increasing")
        extra = 1 if self.has_escape else 0
        self.offset = min(o for o in self.row_offsets)
        self.max_symbol = max(
            o + len(row) - 2 - extra for o, row in zip(self.row_offsets, self.rows)
        )
        self.row_index = np.asarray(self.row_index, dtype=np.int64)

    def symbol_bits(self, symbols: np.ndarray) -> float:
        """Cross-entropy of the quantized model in bits (escape bins count
        the escape probability plus the raw payload)."""
        total_bits = 0.0
        denom = float(1 << self.precision)
        for sym, r in zip(np.asarray(symbols).ravel(), self.row_index):
            row = self.rows[r]
            off = self.row_offsets[r]
            nbins = len(row) - 1
            idx = sym - off
            if self.has_escape and not (0 <= idx < nbins - 1):
                idx = nbins - 1
                total_bits += 8 * _ESCAPE_RAW_BYTES
            elif not (0 <= idx < nbins):
                raise DomainError(f"symbol {sym} outside table range without escape")
            p = (row[idx + 1] - row[idx]) / denom
            total_bits += -np.log2(p)
        return total_bits


def _rows_from_dists(dists, precision: int, tail_mass: float):
    """Build (cumulative rows, offsets), one per distribution.

    The tabulated range of each row covers the central ``1 - tail_mass``
    quantile span.  In-range bins are anchored on the rounded raw CDF
    lattice (so each bin is within one count of its real probability) and
    both tails fold into a trailing escape bin.
    """
    total = 1 << precision
    rows, offsets = [], []
    for dist in dists:
        kmin = int(np.floor(dist.ppf(tail_mass / 2.0)))
        kmax = int(np.ceil(dist.ppf(1.0 - tail_mass / 2.0)))
        edges = np.arange(kmin - 1, kmax + 1) + 0.5
        lattice = np.rint(np.clip(dist.cdf(edges), 0.0, 1.0) * total).astype(np.int64)
        escape = total - int(lattice[-1]) + int(lattice[0])
        pmf = _fix_zero_bins(np.concatenate([np.diff(lattice), [escape]]), precision)
        rows.append([0] + np.cumsum(pmf).tolist())
        offsets.append(kmin)
    return rows, offsets


def build_cdf(
    means: np.ndarray,
    scales: np.ndarray,
    precision: int = DEFAULT_PRECISION,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> CDFTable:
    """Build a coding table for mean-offset-quantized Gaussian symbols.

    Symbols are the integer residuals ``round(y - mean)``, which are
    distributed as a zero-mean Gaussian with the given scale, so only the
    scales shape the table.  Rows are deduplicated across equal scales.
    """
    if not 8 <= precision <= 24:
        raise DomainError(f"precision {precision} outside [8, 24]")
    if not 0.0 < tail_mass <= 0.01:
        raise DomainError(f"tail_mass {tail_mass} outside (0, 0.01]")
    means = np.asarray(means, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if means.shape != scales.shape:
        raise DomainError("means and scales must have equal shapes")
    if scales.size and float(scales.min()) < SCALE_GRID_MIN:
        raise DomainError(f"scale below floor {SCALE_GRID_MIN}")
    uniq, inverse = np.unique(scales.ravel(), return_inverse=True)
    rows, offsets = _rows_from_dists(
        [_norm(loc=0.0, scale=s) for s in uniq], precision, tail_mass
    )
    return CDFTable(rows, offsets, inverse, precision=precision, has_escape=True)


def build_cdf_logistic(
    locs: np.ndarray,
    scales: np.ndarray,
    row_index: np.ndarray,
    precision: int = DEFAULT_PRECISION,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> CDFTable:
    """Coding table for the factorized per-channel logistic prior.

    ``locs``/``scales`` are per-row parameters; ``row_index`` maps each
    symbol position to its channel's row.  Symbols are plain ``round(z)``
    so each row carries its own offset near the location parameter.
    """
    locs = np.asarray(locs, dtype=np.float64).ravel()
    scales = np.asarray(scales, dtype=np.float64).ravel()
    rows, offsets = _rows_from_dists(
        [_logistic(loc=l, scale=s) for l, s in zip(locs, scales)],
        precision,
        tail_mass,
    )
    return CDFTable(rows, offsets, row_index, precision=precision, has_escape=True)


def uniform_byte_table(n: int, precision: int = DEFAULT_PRECISION) -> CDFTable:
    """256-ary uniform table (used for escape payloads and tests)."""
    step = (1 << precision) >> 8
    row = list(range(0, (1 << precision) + 1, step))
    return CDFTable([row], [0], np.zeros(n, dtype=np.int64), precision=precision, has_escape=False)


class _RangeEncoder:
    def __init__(self, renorm_bound: int):
        self.low = 0
        self.range = _MASK32
        self.bot = renorm_bound
        self.out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int, total: int) -> None:
        r = self.range // total
        self.low += r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        self._normalize()

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < self.bot:
                # Carry-less trick: shrink the range up to the next byte
                # boundary of `low` so the top byte can be emitted as-is.
                self.range = (-self.low) & (self.bot - 1)
            else:
                return
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK32
            self.range <<= 8

    def finish(self) -> bytes:
        for _ in range(4):
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK32
        return bytes(self.out)


class _RangeDecoder:
    def __init__(self, data: bytes, renorm_bound: int):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK32
        self.bot = renorm_bound
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise StreamCorruptionError("truncated entropy stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, row: list[int], total: int) -> int:
        r = self.range // total
        val = (self.code - self.low) & _MASK32
        target = min(val // r, total - 1)
        idx = bisect_right(row, target) - 1
        self.low += r * row[idx]
        self.range = r * (row[idx + 1] - row[idx])
        self._normalize()
        return idx

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < self.bot:
                self.range = (-self.low) & (self.bot - 1)
            else:
                return
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.low = (self.low << 8) & _MASK32
            self.range <<= 8


def _renorm_bound(precision: int) -> int:
    # Totals must never exceed the post-renormalization range.
    return 1 << max(16, precision)


def _zigzag(k: int) -> int:
    return 2 * k if k >= 0 else -2 * k - 1


def _unzigzag(u: int) -> int:
    return (u >> 1) if (u & 1) == 0 else -((u + 1) >> 1)


def range_encode(symbols: np.ndarray, table: CDFTable) -> bytes:
    """Encode integer symbols against the table; returns the payload bytes."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    if symbols.size != table.row_index.size:
        raise DomainError("symbol count does not match the table's row index")
    enc = _RangeEncoder(_renorm_bound(table.precision))
    total = 1 << table.precision
    byte_row = uniform_byte_table(0, table.precision).rows[0]
    rows, offsets, ridx = table.rows, table.row_offsets, table.row_index
    for sym, r in zip(symbols.tolist(), ridx.tolist()):
        row = rows[r]
        nbins = len(row) - 1
        idx = sym - offsets[r]
        if 0 <= idx < nbins - (1 if table.has_escape else 0):
            enc.encode(row[idx], row[idx + 1], total)
        elif table.has_escape:
            if not -(1 << 31) <= sym < (1 << 31):
                raise DomainError(f"symbol {sym} too large for escape coding")
            enc.encode(row[nbins - 1], row[nbins], total)
            u = _zigzag(sym)
            for shift in range(8 * (_ESCAPE_RAW_BYTES - 1), -1, -8):
                b = (u >> shift) & 0xFF
                enc.encode(byte_row[b], byte_row[b + 1], total)
        else:
            raise DomainError(f"symbol {sym} outside table range without escape")
    return enc.finish()


def range_decode(data: bytes, table: CDFTable, n: int) -> np.ndarray:
    """Decode ``n`` symbols; exact inverse of :func:`range_encode`."""
    if n != table.row_index.size:
        raise DomainError("symbol count does not match the table's row index")
    dec = _RangeDecoder(data, _renorm_bound(table.precision))
    total = 1 << table.precision
    byte_row = uniform_byte_table(0, table.precision).rows[0]
    out = np.empty(n, dtype=np.int64)
    rows, offsets, ridx = table.rows, table.row_offsets, table.row_index
    for i, r in enumerate(ridx.tolist()):
        row = rows[r]
        nbins = len(row) - 1
        idx = dec.decode(row, total)
        if table.has_escape and idx == nbins - 1:
            u = 0
            for _ in range(_ESCAPE_RAW_BYTES):
                u = (u << 8) | dec.decode(byte_row, total)
            out[i] = _unzigzag(u)
        else:
            out[i] = idx + offsets[r]
    return out


@dataclass(frozen=True)
class BitstreamContainer:
    """Parsed compressed-image file: header metadata plus raw streams."""

    orig_width: int
    orig_height: int
    model_id: int
    streams: tuple[bytes, ...]
    version: int = CONTAINER_VERSION


def serialize_container(streams, dims: tuple[int, int], model_id: int) -> bytes:
    """Serialize streams into the container layout.

    Layout: magic ``ILLM`` | version u8 | orig_width u32 LE |
    orig_height u32 LE | model_id u64 LE | stream_count u8 |
    per stream (length u32 LE + payload).
    """
    width, height = dims
    if width <= 0 or height <= 0:
        raise DomainError("image dimensions must be positive")
    streams = [bytes(s) for s in streams]
    if len(streams) > 255:
        raise DomainError("at most 255 streams per container")
    out = bytearray()
    out += CONTAINER_MAGIC
    out += struct.pack("<BIIQB", CONTAINER_VERSION, width, height, model_id, len(streams))
    for s in streams:
        out += struct.pack("<I", len(s))
        out += s
    return bytes(out)


def parse_container(data: bytes) -> BitstreamContainer:
    """Parse container bytes, validating magic, version and lengths."""
    if len(data) < 4 or data[:4] != CONTAINER_MAGIC:
        raise ContainerError("bad container magic")
    header_fmt = "<BIIQB"
    header_len = 4 + struct.calcsize(header_fmt)
    if len(data) < header_len:
        raise ContainerError("truncated container header")
    version, width, height, model_id, count = struct.unpack_from(header_fmt, data, 4)
    if version != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = header_len
    streams = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise ContainerError("truncated stream length")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise ContainerError("truncated stream payload")
        streams.append(data[pos : pos + length])
        pos += length
    if pos != len(data):
        raise ContainerError("trailing bytes after final stream")
    return BitstreamContainer(width, height, model_id, tuple(streams))


def container_bpp(data: bytes, width: int, height: int) -> float:
    """Measured bitrate: whole-file bits over original pixel count."""
    return 8.0 * len(data) / (width * height)
