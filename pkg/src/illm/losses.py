"""Training objectives: distortion, binary GAN losses, and the
multi-class locally-conditioned adversarial losses.

The multi-class pair generalizes the non-saturating binary losses: the
discriminator classifies every latent-resolution location among C real
classes plus a reserved fake class (channel 0), and the generator is
rewarded for making reconstructions that the discriminator assigns to
the *real image's* labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DomainError

_LOG_EPS = 1e-12


@dataclass
class LossWeights:
    """Multipliers of the rate / distortion / adversarial objective terms."""

    lambda_rate: float = 1.0
    lambda_distortion: float = 1.0
    lambda_adv: float = 0.0
    lambda_mse: float = 150.0

    def __post_init__(self):
        for name in ("lambda_rate", "lambda_distortion", "lambda_adv", "lambda_mse"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")


class PerceptualExtractor(nn.Module):
    """Small frozen conv stack with fixed random weights.

    Serves as the default pluggable feature function for the perceptual
    distortion term; any extractor returning a list of feature maps can
    be dropped in instead.
    """

    def __init__(self, seed: int = 0x5EED, channels=(16, 32, 64, 96, 128)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        in_ch = 3
        for i, out_ch in enumerate(channels):
            conv = nn.Conv2d(in_ch, out_ch, 3, stride=1 if i == 0 else 2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * (in_ch * 9) ** -0.5
                )
                conv.bias.zero_()
            convs.append(conv)
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats


def _unit_normalize(feat):
    return feat / (feat.norm(dim=1, keepdim=True) + 1e-10)


def perceptual_distance(x_hat, x, extractor) -> torch.Tensor:
    """Per-layer unit-normalized squared feature distance, summed over layers."""
    total = x_hat.new_zeros(())
    for fa, fb in zip(extractor(x_hat), extractor(x)):
        diff = _unit_normalize(fa) - _unit_normalize(fb)
        total = total + diff.pow(2).sum(dim=1).mean()
    return total


def distortion(x_hat, x, weights: LossWeights, extractor=None) -> torch.Tensor:
    """lambda_mse * MSE plus the perceptual feature distance."""
    if x_hat.shape != x.shape:
        raise DomainError("shapes of reconstruction and reference differ")
    out = weights.lambda_mse * F.mse_loss(x_hat, x)
    if extractor is not None:
        out = out + perceptual_distance(x_hat, x, extractor)
    return out


def _neg_log(p):
    return -torch.log(torch.clamp(p, min=_LOG_EPS))


def binary_gan_losses(d_real, d_fake):
    """Non-saturating binary pair from raw logits: (L_D, L_G)."""
    loss_d = _neg_log(torch.sigmoid(d_real)).mean() + _neg_log(1 - torch.sigmoid(d_fake)).mean()
    loss_g = _neg_log(torch.sigmoid(d_fake)).mean()
    return loss_d, loss_g


def _check_one_hot(labels):
    sums = labels.sum(dim=1)
    if not torch.allclose(sums, torch.ones_like(sums)):
        raise DomainError("label map must be one-hot per location")
    if bool(((labels != 0) & (labels != 1)).any()):
        raise DomainError("label map entries must be 0 or 1")


def _log_softmax_clamped(logits):
    return torch.log(torch.clamp(torch.softmax(logits, dim=1), min=_LOG_EPS))


def illm_disc_loss(logits_real, logits_fake, labels) -> torch.Tensor:
    """Discriminator loss: real locations should match the labeler's
    classes, fake locations the reserved channel 0."""
    if logits_real.shape != labels.shape:
        raise DomainError("logit and label map shapes differ")
    _check_one_hot(labels)
    real_term = -(labels * _log_softmax_clamped(logits_real)).sum(dim=1).mean()
    fake_term = -_log_softmax_clamped(logits_fake)[:, 0].mean()
    return real_term + fake_term


def illm_gen_loss(logits_fake, labels) -> torch.Tensor:
    """Generator loss: the real image's labels applied to the fake logits."""
    if logits_fake.shape != labels.shape:
        raise DomainError("logit and label map shapes differ")
    _check_one_hot(labels)
    return -(labels * _log_softmax_clamped(logits_fake)).sum(dim=1).mean()


def total_objective(rate, dist, gen_adv, weights: LossWeights):
    """Lagrangian objective: rate (in bpp) + distortion + adversarial."""
    return (
        weights.lambda_rate * rate.bpp
        + weights.lambda_distortion * dist
        + weights.lambda_adv * gen_adv
    )
