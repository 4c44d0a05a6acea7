"""Range coder, CDF table, and container tests.

Expected values marked as frozen were computed with the independent
oracles noted next to them (numerical integration / closed-form CDF),
not with the code under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from illm import entropy as E
from illm.errors import ContainerError, DomainError, StreamCorruptionError


def gaussian_table(scales, precision=16, tail_mass=1e-4):
    scales = np.asarray(scales, dtype=np.float64)
    return E.build_cdf(np.zeros_like(scales), scales, precision, tail_mass)


class TestBuildCdf:
    def test_central_bin_sigma_one(self):
        # Oracle: quad(norm.pdf, -0.5, 0.5) = 0.3829249225480263,
        # lattice difference round(phi(.5)*2^16) - round(phi(-.5)*2^16) = 25096.
        table = gaussian_table([1.0])
        row, off = table.rows[0], table.row_offsets[0]
        central = row[-off + 1] - row[-off]
        assert abs(central - 25095) <= 1

    def test_tiny_scale_concentrates_mass(self):
        table = gaussian_table([0.11])
        row, off = table.rows[0], table.row_offsets[0]
        central = row[-off + 1] - row[-off]
        assert central / 65536 >= 0.9999

    def test_rows_strictly_increasing_to_total(self):
        table = gaussian_table(E.SCALE_GRID)
        for row in table.rows:
            arr = np.asarray(row)
            assert arr[0] == 0 and arr[-1] == 65536
            assert (np.diff(arr) >= 1).all()

    def test_scale_below_floor_rejected(self):
        with pytest.raises(DomainError):
            gaussian_table([0.05])

    def test_precision_bounds(self):
        with pytest.raises(DomainError):
            gaussian_table([1.0], precision=7)
        with pytest.raises(DomainError):
            gaussian_table([1.0], precision=25)
        with pytest.raises(DomainError):
            gaussian_table([1.0], tail_mass=0.5)

    def test_snap_scales_roundtrip(self):
        rng = np.random.default_rng(3)
        raw = np.exp(rng.normal(0, 2, 1000))
        snapped, idx = E.snap_scales(raw)
        assert np.array_equal(snapped, E.SCALE_GRID[idx])
        # snapping is idempotent
        again, idx2 = E.snap_scales(snapped)
        assert np.array_equal(idx, idx2)


class TestRangeCoder:
    def test_empty(self):
        table = E.uniform_byte_table(0)
        data = E.range_encode(np.array([], dtype=np.int64), table)
        assert len(data) <= 8
        assert E.range_decode(data, table, 0).size == 0

    def test_uniform_identity_and_length(self):
        rng = np.random.default_rng(0)
        table = E.uniform_byte_table(10_000)
        syms = rng.integers(0, 256, 10_000)
        data = E.range_encode(syms, table)
        assert np.array_equal(E.range_decode(data, table, 10_000), syms)
        # Oracle: uniform 256-ary entropy = 8 bits/symbol -> 10,000 bytes.
        assert abs(len(data) - 10_000) <= 100

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        table = gaussian_table(E.snap_scales(np.exp(rng.normal(0, 1, 300)))[0])
        syms = np.rint(rng.normal(0, 1, 300)).astype(np.int64)
        assert E.range_encode(syms, table) == E.range_encode(syms, table)

    def test_escape_roundtrip(self):
        table = gaussian_table([0.11] * 4)
        syms = np.array([0, 1_000_000, -77, 3])
        data = E.range_encode(syms, table)
        assert np.array_equal(E.range_decode(data, table, 4), syms)

    def test_out_of_range_without_escape(self):
        table = E.uniform_byte_table(1)
        with pytest.raises(DomainError):
            E.range_encode(np.array([256]), table)

    def test_truncated_stream(self):
        table = E.uniform_byte_table(100)
        syms = np.arange(100) % 256
        data = E.range_encode(syms, table)
        with pytest.raises(StreamCorruptionError):
            E.range_decode(data[: len(data) // 2], table, 100)

    def test_near_optimality(self):
        # coded length <= quantized-model cross-entropy + 32 bits slack
        # (symbol_bits already charges escapes their raw payload).
        rng = np.random.default_rng(7)
        for _ in range(30):
            n = int(rng.integers(100, 2000))
            scales = E.snap_scales(np.exp(rng.normal(0, 1.5, n)))[0]
            table = gaussian_table(scales)
            syms = np.rint(rng.normal(0, scales)).astype(np.int64)
            data = E.range_encode(syms, table)
            est = table.symbol_bits(syms)
            assert 8 * len(data) <= 1.02 * est + 64

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(0, 2**32 - 1),
        st.integers(1, 40),
        st.integers(0, 400),
        st.integers(8, 16),
    )
    def test_fuzzed_roundtrip(self, seed, n_bins, n_syms, precision):
        rng = np.random.default_rng(seed)
        total = 1 << precision
        if n_bins > total:
            n_bins = total
        weights = rng.integers(1, 1000, n_bins).astype(np.float64)
        cum = np.concatenate([[0.0], np.cumsum(weights) / weights.sum()])
        pmf = E.quantize_pmf(cum, precision)
        row = [0] + np.cumsum(pmf).tolist()
        table = E.CDFTable(
            [row], [0], np.zeros(n_syms, dtype=np.int64), precision, has_escape=False
        )
        syms = rng.integers(0, n_bins, n_syms)
        data = E.range_encode(syms, table)
        assert np.array_equal(E.range_decode(data, table, n_syms), syms)


class TestLogisticTable:
    def test_offsets_track_location(self):
        table = E.build_cdf_logistic(
            np.array([10.0, -3.0]), np.array([1.0, 0.5]), np.array([0, 0, 1, 1])
        )
        syms = np.array([10, 12, -3, -2])
        data = E.range_encode(syms, table)
        assert np.array_equal(E.range_decode(data, table, 4), syms)
        assert table.row_offsets[0] > table.row_offsets[1]


class TestContainer:
    def test_layout_arithmetic(self):
        data = E.serialize_container([b"abc", b"hello"], (256, 256), 7)
        assert len(data) == 4 + 1 + 4 + 4 + 8 + 1 + (4 + 3) + (4 + 5)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            streams = [rng.bytes(int(rng.integers(0, 50))) for _ in range(int(rng.integers(0, 5)))]
            dims = (int(rng.integers(1, 4000)), int(rng.integers(1, 4000)))
            model_id = int(rng.integers(0, 2**63))
            c = E.parse_container(E.serialize_container(streams, dims, model_id))
            assert c.streams == tuple(streams)
            assert (c.orig_width, c.orig_height) == dims
            assert c.model_id == model_id

    def test_bad_magic(self):
        data = bytearray(E.serialize_container([b"x"], (8, 8), 0))
        data[0] ^= 0xFF
        with pytest.raises(ContainerError):
            E.parse_container(bytes(data))

    def test_truncation(self):
        data = E.serialize_container([b"abcdef"], (8, 8), 0)
        with pytest.raises(ContainerError):
            E.parse_container(data[:-2])

    def test_trailing_garbage(self):
        data = E.serialize_container([b"x"], (8, 8), 0)
        with pytest.raises(ContainerError):
            E.parse_container(data + b"\x00")

    def test_bad_version(self):
        data = bytearray(E.serialize_container([], (8, 8), 0))
        data[4] = 99
        with pytest.raises(ContainerError):
            E.parse_container(bytes(data))

    def test_bpp_definition(self):
        data = E.serialize_container([b"ab"], (100, 50), 0)
        assert E.container_bpp(data, 100, 50) == 8.0 * len(data) / 5000
