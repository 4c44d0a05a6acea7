"""Adversarial discriminators: the multi-class U-Net and the binary
PatchGAN baseline, with a normalization knob covering the ablation
options (none / instance / spectral)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils import spectral_norm

from .errors import DomainError

_NORMS = ("none", "instance", "spectral")


@dataclass
class DiscriminatorConfig:
    kind: str = "illm_unet"  # illm_unet | patchgan
    normalization: str = "none"
    base_channels: int = 64
    num_classes: int = 1024  # C (multi-class head only)
    conditioning_channels: int = 0  # patchgan latent conditioning

    def __post_init__(self):
        if self.kind not in ("illm_unet", "patchgan"):
            raise DomainError(f"unknown discriminator kind {self.kind!r}")
        if self.normalization not in _NORMS:
            raise DomainError(f"unknown normalization {self.normalization!r}")


def _conv(cfg: DiscriminatorConfig, in_ch, out_ch, kernel=3, stride=1):
    conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2)
    if cfg.normalization == "spectral":
        conv = spectral_norm(conv)
    return conv


def _post_norm(cfg: DiscriminatorConfig, ch):
    if cfg.normalization == "instance":
        return nn.InstanceNorm2d(ch, affine=True)
    return nn.Identity()


class _Block(nn.Module):
    """Residual pair of 3x3 convs, LeakyReLU activations."""

    def __init__(self, cfg, in_ch, out_ch):
        super().__init__()
        self.conv1 = _conv(cfg, in_ch, out_ch)
        self.conv2 = _conv(cfg, out_ch, out_ch)
        self.norm1 = _post_norm(cfg, out_ch)
        self.norm2 = _post_norm(cfg, out_ch)
        self.skip = _conv(cfg, in_ch, out_ch, kernel=1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = F.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        h = self.norm2(self.conv2(h))
        return F.leaky_relu(h + self.skip(x), 0.2)


class UNetDiscriminator(nn.Module):
    """U-Net over the image with the output path cut at 1/8 resolution,
    emitting (C+1)-way logits aligned with the labeler's latent grid.

    Downsampling uses average pooling and all convs are 3x3 stride 1, so
    the network is exactly flip-equivariant whenever its kernels are.
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        if config.kind != "illm_unet":
            raise DomainError("config.kind must be illm_unet")
        self.config = config
        n = config.base_channels
        self.stem = _Block(config, 3, n)
        self.down1 = _Block(config, n, 2 * n)      # 1/2
        self.down2 = _Block(config, 2 * n, 4 * n)  # 1/4
        self.down3 = _Block(config, 4 * n, 4 * n)  # 1/8
        self.down4 = _Block(config, 4 * n, 4 * n)  # 1/16
        self.up = _Block(config, 8 * n, 4 * n)     # back to 1/8 with skip
        self.head = _conv(config, 4 * n, config.num_classes + 1)

    def forward(self, image):
        if image.dim() == 3:
            image = image.unsqueeze(0)
        h, w = image.shape[-2:]
        if h % 8 or w % 8:
            raise DomainError(f"image dims must be multiples of 8, got {h}x{w}")
        x0 = self.stem(image)
        x1 = self.down1(F.avg_pool2d(x0, 2))
        x2 = self.down2(F.avg_pool2d(x1, 2))
        x3 = self.down3(F.avg_pool2d(x2, 2))
        x4 = self.down4(F.avg_pool2d(x3, 2))
        u = F.interpolate(x4, scale_factor=2, mode="nearest")
        u = self.up(torch.cat([u, x3], dim=1))
        return self.head(u)


class PatchGANDiscriminator(nn.Module):
    """Binary patch discriminator: four stride-2 convs, one logit per
    16x16 image patch; optionally conditioned on the codec latent
    (nearest-upsampled and concatenated to the input)."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        if config.kind != "patchgan":
            raise DomainError("config.kind must be patchgan")
        self.config = config
        n = config.base_channels
        in_ch = 3 + config.conditioning_channels
        layers = []
        for out_ch in (n, 2 * n, 4 * n, 8 * n):
            conv = nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1)
            if config.normalization == "spectral":
                conv = spectral_norm(conv)
            layers += [conv, _post_norm(config, out_ch), nn.LeakyReLU(0.2)]
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.head = _conv(config, in_ch, 1)

    def forward(self, image, conditioning_latent=None):
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if self.config.conditioning_channels:
            if conditioning_latent is None:
                raise DomainError("this discriminator requires a conditioning latent")
            cond = F.interpolate(
                conditioning_latent, size=image.shape[-2:], mode="nearest"
            )
            image = torch.cat([image, cond], dim=1)
        elif conditioning_latent is not None:
            raise DomainError("unconditional discriminator got a conditioning latent")
        return self.head(self.features(image))


def make_discriminator(config: DiscriminatorConfig) -> nn.Module:
    if config.kind == "illm_unet":
        return UNetDiscriminator(config)
    return PatchGANDiscriminator(config)
