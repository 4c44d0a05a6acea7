"""Mean-scale hyperprior codec.

The analysis transform maps an image to a latent at 1/16 resolution; a
second (hyper) autoencoder conditions per-symbol Gaussian means and
scales for the latent, while the hyper-latent itself is coded against a
learned per-channel logistic prior.  Quantization is mean-offset
rounding; training uses the straight-through estimator on the decoder
path and additive uniform noise for the rate terms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import backend, entropy
from .errors import DomainError, ModelMismatchError
from .layers import ChannelNorm

LIKELIHOOD_FLOOR_LOG2 = -50.0
CHECKPOINT_VERSION = 1


@dataclass
class CodecConfig:
    """Architecture and coding knobs; channel counts are desk-scale."""

    latent_channels: int = 64
    hyper_channels: int = 32
    base_channels: int = 64
    scale_floor: float = 0.11
    precision: int = 16
    tail_mass: float = 1e-4

    # encoder downsamples x16, hyper path another x4
    pad_multiple: int = 64
    latent_stride: int = 16
    hyper_stride: int = 64


@dataclass
class RateEstimate:
    latent_bits: float
    hyper_bits: float
    total_bits: float = field(init=False)
    bpp: float = field(init=False)
    pixels: int = 1

    def __post_init__(self):
        self.total_bits = self.latent_bits + self.hyper_bits
        self.bpp = self.total_bits / self.pixels


def quantize(values: torch.Tensor, means, mode: str) -> torch.Tensor:
    """Quantize onto the integer grid offset by ``means``.

    ``round`` and ``ste`` both return ``round(values - means) + means``
    (ties to even); ``ste`` keeps identity gradients.  ``noise`` adds
    uniform [-0.5, 0.5) noise instead (training-time rate relaxation).
    """
    if not torch.is_tensor(means):
        means = torch.as_tensor(means, dtype=values.dtype, device=values.device)
    if means.shape not in ((), values.shape) and means.numel() != 1:
        raise DomainError("means shape must match values")
    if mode == "noise":
        return values + torch.empty_like(values).uniform_(-0.5, 0.5)
    if mode == "round":
        return torch.round(values - means) + means
    if mode == "ste":
        # forward is exactly the rounded value; backward is identity
        rounded = torch.round(values - means) + means
        return rounded.detach() + (values - values.detach())
    raise DomainError(f"unknown quantization mode {mode!r}")


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    # erfc form stays accurate deep in the tails
    return 0.5 * torch.erfc(-x * (2**-0.5))


def likelihood_bits(
    quantized: torch.Tensor, means: torch.Tensor, scales: torch.Tensor
) -> torch.Tensor:
    """Per-symbol code length under the mean-scale Gaussian, in bits.

    bits = -log2[ Phi((q - mu + .5)/sigma) - Phi((q - mu - .5)/sigma) ],
    clamped below by the 2^-50 likelihood floor.
    """
    if float(scales.detach().min()) < entropy.SCALE_GRID_MIN - 1e-9:
        raise DomainError("scale below floor")
    delta = torch.abs(quantized - means)
    upper = _std_normal_cdf((0.5 - delta) / scales)
    lower = _std_normal_cdf((-0.5 - delta) / scales)
    p = torch.clamp(upper - lower, min=2.0**LIKELIHOOD_FLOOR_LOG2)
    return -torch.log2(p)


class FactorizedLogisticPrior(nn.Module):
    """Per-channel location-scale logistic density for the hyper-latent."""

    def __init__(self, channels: int):
        super().__init__()
        self.loc = nn.Parameter(torch.zeros(channels))
        self.log_scale = nn.Parameter(torch.zeros(channels))

    def _cdf(self, x):
        loc = self.loc.view(1, -1, 1, 1)
        scale = torch.exp(self.log_scale).view(1, -1, 1, 1)
        return torch.sigmoid((x - loc) / scale)

    def bits(self, z_hat: torch.Tensor) -> torch.Tensor:
        p = self._cdf(z_hat + 0.5) - self._cdf(z_hat - 0.5)
        return -torch.log2(torch.clamp(p, min=2.0**LIKELIHOOD_FLOOR_LOG2))

    def table_params(self) -> tuple[np.ndarray, np.ndarray]:
        locs = self.loc.detach().double().numpy()
        scales = np.exp(self.log_scale.detach().double().numpy())
        return locs, np.maximum(scales, 1e-3)


def _conv(in_ch, out_ch, stride=2):
    return nn.Conv2d(in_ch, out_ch, 5, stride=stride, padding=2)


def _deconv(in_ch, out_ch, stride=2):
    return nn.ConvTranspose2d(in_ch, out_ch, 5, stride=stride, padding=2, output_padding=stride - 1)


class AnalysisTransform(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        n = cfg.base_channels
        self.net = nn.Sequential(
            _conv(3, n), ChannelNorm(n), nn.ReLU(),
            _conv(n, n), ChannelNorm(n), nn.ReLU(),
            _conv(n, n), ChannelNorm(n), nn.ReLU(),
            _conv(n, cfg.latent_channels),
        )

    def forward(self, x):
        return self.net(x)


class SynthesisTransform(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        n = cfg.base_channels
        self.net = nn.Sequential(
            _deconv(cfg.latent_channels, n), ChannelNorm(n), nn.ReLU(),
            _deconv(n, n), ChannelNorm(n), nn.ReLU(),
            _deconv(n, n), ChannelNorm(n), nn.ReLU(),
            _deconv(n, 3),
        )
        # start near mid-gray so the output clamp does not kill gradients
        nn.init.constant_(self.net[-1].bias, 0.5)

    def forward(self, y):
        return self.net(y)


class HyperAnalysis(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        c = cfg.hyper_channels
        self.net = nn.Sequential(
            nn.Conv2d(cfg.latent_channels, c, 3, padding=1), nn.ReLU(),
            _conv(c, c), nn.ReLU(),
            _conv(c, c),
        )

    def forward(self, y):
        return self.net(y)


class HyperSynthesis(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        c, cy = cfg.hyper_channels, cfg.latent_channels
        self.net = nn.Sequential(
            _deconv(c, c), nn.ReLU(),
            _deconv(c, c * 2), nn.ReLU(),
            nn.Conv2d(c * 2, cy * 2, 3, padding=1),
        )

    def forward(self, z_hat):
        return self.net(z_hat).chunk(2, dim=1)


class HyperpriorCodec(nn.Module):
    """The full codec; parameter groups map onto encoder/entropy/decoder."""

    def __init__(self, config: CodecConfig | None = None):
        super().__init__()
        self.config = config or CodecConfig()
        self.encoder = AnalysisTransform(self.config)
        self.decoder = SynthesisTransform(self.config)
        self.hyper_encoder = HyperAnalysis(self.config)
        self.hyper_decoder = HyperSynthesis(self.config)
        self.prior = FactorizedLogisticPrior(self.config.hyper_channels)

    # -- parameter groups -------------------------------------------------
    def encoder_parameters(self):
        return list(self.encoder.parameters())

    def decoder_parameters(self):
        return list(self.decoder.parameters())

    def entropy_parameters(self):
        return (
            list(self.hyper_encoder.parameters())
            + list(self.hyper_decoder.parameters())
            + list(self.prior.parameters())
        )

    # -- transforms --------------------------------------------------------
    def _check_image(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[1] != 3:
            raise DomainError(f"expected (B,3,H,W) image, got {tuple(image.shape)}")
        if float(image.min()) < 0.0 or float(image.max()) > 1.0:
            raise DomainError("image values must lie in [0, 1]")
        h, w = image.shape[-2:]
        m = self.config.pad_multiple
        if h % m or w % m:
            raise DomainError(f"image dims must be padded to multiples of {m}, got {h}x{w}")
        return image

    def analyze(self, image: torch.Tensor) -> torch.Tensor:
        return self.encoder(self._check_image(image))

    def synthesize(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.dim() == 3:
            latent = latent.unsqueeze(0)
        if latent.shape[1] != self.config.latent_channels:
            raise DomainError("latent channel count mismatch")
        return torch.clamp(self.decoder(latent), 0.0, 1.0)

    def _scales(self, raw):
        return self.config.scale_floor + F.softplus(raw)

    def entropy_params(self, latent: torch.Tensor, mode: str = "round"):
        """Predict (means, scales) for the latent via the hyper path.

        Returns (means, scales, z_quantized, hyper_bits) where hyper_bits
        come from the factorized logistic prior at the quantized (or
        noise-relaxed) hyper-latent.
        """
        z = self.hyper_encoder(latent)
        z_hat = quantize(z, 0.0, mode)
        means, raw_scales = self.hyper_decoder(z_hat)
        hyper_bits = self.prior.bits(z_hat).sum()
        return means, self._scales(raw_scales), z_hat, hyper_bits

    def forward_train(self, image: torch.Tensor):
        """Training forward pass: STE on the decoder path, noise on rates."""
        image = self._check_image(image)
        y = self.encoder(image)
        z = self.hyper_encoder(y)
        z_ste = quantize(z, 0.0, "ste")
        means, raw_scales = self.hyper_decoder(z_ste)
        scales = self._scales(raw_scales)

        y_noise = quantize(y, means, "noise")
        latent_bits = likelihood_bits(y_noise, means, scales).sum()
        hyper_bits = self.prior.bits(quantize(z, 0.0, "noise")).sum()

        y_ste = quantize(y, means, "ste")
        recon = torch.clamp(self.decoder(y_ste), 0.0, 1.0)

        pixels = image.shape[0] * image.shape[-2] * image.shape[-1]
        rate = RateEstimate(latent_bits, hyper_bits, pixels=pixels)
        return recon, rate, y_ste

    def eval_rate(self, image: torch.Tensor) -> RateEstimate:
        """Deterministic (round-quantized) rate estimate in bits."""
        with torch.no_grad():
            y = self.analyze(image)
            means, scales, z_hat, hyper_bits = self.entropy_params(y, "round")
            y_hat = quantize(y, means, "round")
            latent_bits = likelihood_bits(y_hat, means, scales).sum()
            pixels = image.shape[0] * image.shape[-2] * image.shape[-1] if image.dim() == 4 else image.shape[-2] * image.shape[-1]
        return RateEstimate(float(latent_bits), float(hyper_bits), pixels=pixels)

    # -- bitstream path ------------------------------------------------------
    def model_id(self) -> int:
        """Stable 64-bit digest of the parameters and config."""
        h = hashlib.sha256()
        h.update(repr(self.config).encode())
        for name, tensor in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
        return int.from_bytes(h.digest()[:8], "little")

    def _pad(self, image: torch.Tensor) -> torch.Tensor:
        h, w = image.shape[-2:]
        m = self.config.pad_multiple
        ph = (m - h % m) % m
        pw = (m - w % m) % m
        if ph == 0 and pw == 0:
            return image
        mode = "reflect" if ph < h and pw < w else "replicate"
        return F.pad(image, (0, pw, 0, ph), mode=mode)

    def compress(self, image: np.ndarray | torch.Tensor) -> bytes:
        """Encode an image (HxWx3 floats in [0,1]) into a container."""
        image_t = _to_tensor(image)
        orig_h, orig_w = image_t.shape[-2:]
        cfg = self.config
        with torch.no_grad():
            x = self._pad(image_t.unsqueeze(0))
            y = self.analyze(x)
            means, scales, z_hat, _ = self.entropy_params(y, "round")

            z_syms = torch.round(z_hat).long().numpy().ravel()
            locs, z_scales = self.prior.table_params()
            channels = np.repeat(
                np.arange(cfg.hyper_channels), z_hat.shape[-2] * z_hat.shape[-1]
            )
            z_table = entropy.build_cdf_logistic(
                locs, z_scales, channels, cfg.precision, cfg.tail_mass
            )
            z_stream = backend.range_encode(z_syms, z_table)

            y_syms = torch.round(y - means).long().numpy().ravel()
            snapped, _ = entropy.snap_scales(scales.double().numpy().ravel())
            y_table = entropy.build_cdf(
                np.zeros_like(snapped), snapped, cfg.precision, cfg.tail_mass
            )
            y_stream = backend.range_encode(y_syms, y_table)

        return entropy.serialize_container(
            [z_stream, y_stream], (orig_w, orig_h), self.model_id()
        )

    def decompress(self, data: bytes) -> np.ndarray:
        """Decode a container back to an HxWx3 float image."""
        container = entropy.parse_container(data)
        if container.model_id != self.model_id():
            raise ModelMismatchError("container was produced by a different model")
        if len(container.streams) != 2:
            raise ModelMismatchError("expected hyper and latent streams")
        cfg = self.config
        orig_w, orig_h = container.orig_width, container.orig_height
        m = cfg.pad_multiple
        pad_h = -(-orig_h // m) * m
        pad_w = -(-orig_w // m) * m
        zh, zw = pad_h // cfg.hyper_stride, pad_w // cfg.hyper_stride
        yh, yw = pad_h // cfg.latent_stride, pad_w // cfg.latent_stride

        with torch.no_grad():
            locs, z_scales = self.prior.table_params()
            channels = np.repeat(np.arange(cfg.hyper_channels), zh * zw)
            z_table = entropy.build_cdf_logistic(
                locs, z_scales, channels, cfg.precision, cfg.tail_mass
            )
            z_syms = backend.range_decode(container.streams[0], z_table, channels.size)
            z_hat = torch.from_numpy(
                z_syms.reshape(1, cfg.hyper_channels, zh, zw)
            ).float()

            means, raw_scales = self.hyper_decoder(z_hat)
            scales = self._scales(raw_scales)
            snapped, _ = entropy.snap_scales(scales.double().numpy().ravel())
            y_table = entropy.build_cdf(
                np.zeros_like(snapped), snapped, cfg.precision, cfg.tail_mass
            )
            y_syms = backend.range_decode(
                container.streams[1], y_table, snapped.size
            )
            y_hat = (
                torch.from_numpy(y_syms.reshape(1, cfg.latent_channels, yh, yw)).float()
                + means
            )
            recon = self.synthesize(y_hat)
        return _to_numpy(recon[0, :, :orig_h, :orig_w])


def _to_tensor(image) -> torch.Tensor:
    """Accept HxWx3 numpy or (3,H,W)/(B,3,H,W) tensors; return (3,H,W)."""
    if isinstance(image, np.ndarray):
        if image.ndim != 3 or image.shape[-1] != 3:
            raise DomainError(f"expected HxWx3 array, got {image.shape}")
        t = torch.from_numpy(np.ascontiguousarray(image)).float().permute(2, 0, 1)
    else:
        t = image.float()
        if t.dim() == 4:
            if t.shape[0] != 1:
                raise DomainError("compress takes one image at a time")
            t = t[0]
    if float(t.min()) < 0.0 or float(t.max()) > 1.0:
        raise DomainError("image values must lie in [0, 1]")
    return t


def _to_numpy(image_chw: torch.Tensor) -> np.ndarray:
    return image_chw.detach().permute(1, 2, 0).contiguous().numpy()


def save_checkpoint(path, model: nn.Module, kind: str, extra: dict | None = None):
    """Versioned, self-describing parameter archive."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": getattr(model, "config", None),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_kind: str | None = None) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ModelMismatchError(f"unsupported checkpoint version in {path}")
    if expected_kind is not None and payload.get("kind") != expected_kind:
        raise ModelMismatchError(
            f"checkpoint kind {payload.get('kind')!r} != expected {expected_kind!r}"
        )
    return payload


def load_codec(path) -> HyperpriorCodec:
    payload = load_checkpoint(path, "codec")
    codec = HyperpriorCodec(payload["config"])
    codec.load_state_dict(payload["state_dict"])
    codec.eval()
    return codec
