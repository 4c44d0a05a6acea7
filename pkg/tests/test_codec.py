"""Hyperprior codec tests: shapes, quantization, rates, bitstream path."""

import numpy as np
import pytest
import torch

from illm.codec import (
    CodecConfig,
    HyperpriorCodec,
    RateEstimate,
    likelihood_bits,
    load_codec,
    quantize,
    save_checkpoint,
)
from illm.errors import DomainError, ModelMismatchError


@pytest.fixture(scope="module")
def codec():
    torch.manual_seed(0)
    return HyperpriorCodec().eval()


class TestShapes:
    def test_analyze_256(self, codec):
        y = codec.analyze(torch.rand(1, 3, 256, 256))
        assert tuple(y.shape) == (1, 64, 16, 16)

    def test_analyze_64(self, codec):
        y = codec.analyze(torch.rand(1, 3, 64, 64))
        assert tuple(y.shape) == (1, 64, 4, 4)

    def test_out_of_range_rejected(self, codec):
        bad = torch.rand(1, 3, 64, 64) + 1.0
        with pytest.raises(DomainError):
            codec.analyze(bad)

    def test_unpadded_rejected(self, codec):
        with pytest.raises(DomainError):
            codec.analyze(torch.rand(1, 3, 100, 100))

    def test_synthesize_shapes(self, codec):
        assert tuple(codec.synthesize(torch.zeros(1, 64, 16, 16)).shape) == (1, 3, 256, 256)
        assert tuple(codec.synthesize(torch.zeros(1, 64, 4, 4)).shape) == (1, 3, 64, 64)

    def test_synthesize_deterministic(self, codec):
        z = torch.zeros(1, 64, 4, 4)
        a = codec.synthesize(z)
        b = codec.synthesize(z)
        assert torch.equal(a, b)

    def test_entropy_params_shapes(self, codec):
        y = torch.randn(1, 64, 16, 16)
        means, scales, z, hyper_bits = codec.entropy_params(y)
        assert means.shape == y.shape and scales.shape == y.shape
        assert tuple(z.shape) == (1, 32, 4, 4)
        assert float(scales.detach().min()) >= 0.11

    def test_entropy_params_deterministic(self, codec):
        y = torch.randn(1, 64, 16, 16)
        m1, s1, _, h1 = codec.entropy_params(y, "round")
        m2, s2, _, h2 = codec.entropy_params(y, "round")
        assert torch.equal(m1, m2) and torch.equal(s1, s2)
        assert float(h1.detach()) == float(h2.detach())


class TestQuantize:
    def test_round_examples(self):
        assert quantize(torch.tensor([1.4]), torch.tensor([0.0]), "round").item() == 1.0
        assert quantize(torch.tensor([1.4]), torch.tensor([0.25]), "round").item() == 1.25
        # ties round to even
        assert quantize(torch.tensor([0.5]), torch.tensor([0.0]), "round").item() == 0.0

    def test_round_within_half(self):
        v = torch.randn(1000)
        m = torch.randn(1000)
        q = quantize(v, m, "round")
        assert float((q - v).abs().max()) <= 0.5

    def test_idempotent(self):
        v = torch.randn(100)
        m = torch.randn(100)
        q = quantize(v, m, "round")
        assert torch.equal(quantize(q, m, "round"), q)

    def test_noise_bounds(self):
        torch.manual_seed(0)
        v = torch.zeros(10_000)
        q = quantize(v, 0.0, "noise")
        assert float(q.min()) >= -0.5 and float(q.max()) < 0.5

    def test_unknown_mode(self):
        with pytest.raises(DomainError):
            quantize(torch.zeros(1), 0.0, "flux")

    def test_ste_forward_equals_round(self):
        v = torch.randn(500, requires_grad=True)
        m = torch.randn(500)
        assert torch.equal(quantize(v, m, "ste").detach(), quantize(v.detach(), m, "round"))

    def test_ste_gradient_is_identity(self):
        # same linear graph with quantization replaced by identity
        torch.manual_seed(1)
        w = torch.randn(64)
        v1 = torch.randn(64, requires_grad=True)
        (quantize(v1, 0.3, "ste") * w).sum().backward()
        v2 = v1.detach().clone().requires_grad_(True)
        (v2 * w).sum().backward()
        assert torch.allclose(v1.grad, v2.grad, atol=1e-6)


class TestLikelihood:
    def test_center_bits_sigma_one(self):
        # Oracle: quad(norm.pdf, -.5, .5) = 0.3829249225480263 -> 1.3848665 bits
        bits = likelihood_bits(torch.zeros(1), torch.zeros(1), torch.ones(1))
        assert abs(float(bits) - 1.3848665) < 1e-4

    def test_center_bits_tiny_scale(self):
        bits = likelihood_bits(torch.zeros(1), torch.zeros(1), torch.full((1,), 0.11))
        assert float(bits) < 1e-4

    def test_normalization(self):
        ks = torch.arange(-30, 31).float()
        bits = likelihood_bits(ks, torch.zeros_like(ks), torch.ones_like(ks))
        assert abs(float((2.0 ** -bits).sum()) - 1.0) < 1e-6

    def test_monotone_in_scale(self):
        scales = torch.linspace(0.2, 50, 200)
        bits = likelihood_bits(torch.zeros_like(scales), torch.zeros_like(scales), scales)
        assert (bits[1:] > bits[:-1]).all()

    def test_scale_below_floor(self):
        with pytest.raises(DomainError):
            likelihood_bits(torch.zeros(1), torch.zeros(1), torch.full((1,), 0.01))


class TestForwardTrain:
    def test_accounting_and_shapes(self):
        torch.manual_seed(0)
        codec = HyperpriorCodec()
        x = torch.rand(2, 3, 64, 64)
        recon, rate, y_hat = codec.forward_train(x)
        assert recon.shape == x.shape
        total = float(rate.total_bits.detach())
        parts = float(rate.latent_bits.detach()) + float(rate.hyper_bits.detach())
        assert abs(total - parts) < 1e-3
        assert float(rate.bpp.detach()) > 0

    def test_encoder_grads_flow_through_rounding(self):
        torch.manual_seed(0)
        codec = HyperpriorCodec()
        x = torch.rand(1, 3, 64, 64)
        recon, rate, _ = codec.forward_train(x)
        loss = ((recon - x) ** 2).mean()
        loss.backward()
        grads = [p.grad for p in codec.encoder_parameters() if p.grad is not None]
        assert grads and any(float(g.abs().sum()) > 0 for g in grads)


class TestBitstream:
    def test_roundtrip_matches_deterministic_path(self, codec):
        rng = np.random.default_rng(1)
        for h, w in [(64, 64), (96, 80), (70, 131)]:
            img = rng.random((h, w, 3)).astype(np.float32)
            out = codec.decompress(codec.compress(img))
            t = torch.from_numpy(img).permute(2, 0, 1).unsqueeze(0)
            with torch.no_grad():
                xp = codec._pad(t)
                y = codec.analyze(xp)
                means, _, _, _ = codec.entropy_params(y, "round")
                rec = codec.synthesize(quantize(y, means, "round"))
            direct = rec[0, :, :h, :w].permute(1, 2, 0).numpy()
            assert np.array_equal(out, direct)

    def test_compress_deterministic(self, codec):
        img = np.random.default_rng(2).random((64, 64, 3)).astype(np.float32)
        assert codec.compress(img) == codec.compress(img)

    def test_model_mismatch_detected(self, codec):
        img = np.random.default_rng(3).random((64, 64, 3)).astype(np.float32)
        data = codec.compress(img)
        torch.manual_seed(99)
        other = HyperpriorCodec().eval()
        with pytest.raises(ModelMismatchError):
            other.decompress(data)

    def test_corrupted_stream_surfaced(self, codec):
        from illm.entropy import parse_container, serialize_container
        from illm.errors import CodecError

        img = np.random.default_rng(5).random((64, 64, 3)).astype(np.float32)
        data = codec.compress(img)
        c = parse_container(data)
        # truncate the latent payload: decode must fail loudly, not silently
        broken = serialize_container(
            [c.streams[0], c.streams[1][:3]], (c.orig_width, c.orig_height), c.model_id
        )
        with pytest.raises(CodecError):
            codec.decompress(broken)

    def test_coded_size_near_estimate(self, codec):
        rng = np.random.default_rng(4)
        for _ in range(5):
            img = rng.random((64, 64, 3)).astype(np.float32)
            data = codec.compress(img)
            t = torch.from_numpy(img).permute(2, 0, 1).unsqueeze(0)
            est = codec.eval_rate(codec._pad(t))
            from illm.entropy import parse_container

            streams = parse_container(data).streams
            assert 8 * len(streams[0]) <= 1.02 * est.hyper_bits + 64
            assert 8 * len(streams[1]) <= 1.02 * est.latent_bits + 64


class TestCheckpoint:
    def test_roundtrip_identity(self, codec, tmp_path):
        path = tmp_path / "codec.pt"
        save_checkpoint(path, codec, "codec")
        loaded = load_codec(path)
        for (ka, va), (kb, vb) in zip(
            sorted(codec.state_dict().items()), sorted(loaded.state_dict().items())
        ):
            assert ka == kb and torch.equal(va, vb)
        assert loaded.model_id() == codec.model_id()

    def test_kind_checked(self, codec, tmp_path):
        path = tmp_path / "c.pt"
        save_checkpoint(path, codec, "codec")
        from illm.codec import load_checkpoint

        with pytest.raises(ModelMismatchError):
            load_checkpoint(path, "labeler")
