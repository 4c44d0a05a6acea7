"""Vector-quantizing labeler.

A small convolutional autoencoder whose codebook partitions the latent
space into Voronoi cells; the labeling function maps an image to the
spatial map of nearest-code indices, one-hot over C+1 channels with
channel 0 reserved for fakes.  Only the labeling path is used during
codec fine-tuning; the decoder exists to train the representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DomainError
from .layers import ChannelNorm, LatentSelfAttention, ResidualBlock
from .losses import LossWeights, distortion


@dataclass
class LabelerConfig:
    codebook_size: int = 1024
    embed_dim: int = 32
    base_channels: int = 64
    commitment_weight: float = 0.25
    normalization: str = "channel"  # channel | group | none
    attention: bool = False
    lambda_mse: float = 1.0

    def __post_init__(self):
        if self.commitment_weight <= 0:
            raise DomainError("commitment weight must be positive")
        if self.normalization not in ("channel", "group", "none"):
            raise DomainError(f"unknown normalization {self.normalization!r}")


def _norm(kind: str, ch: int) -> nn.Module:
    if kind == "channel":
        return ChannelNorm(ch)
    if kind == "group":
        return nn.GroupNorm(8, ch)
    return nn.Identity()


def nearest_code(latent: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Index of the closest codebook vector per location (squared
    Euclidean; ties resolve to the lowest index).

    ``latent`` is (D,H,W) or (B,D,H,W); ``codebook`` is (C,D).
    """
    if codebook.dim() != 2 or codebook.shape[0] < 1:
        raise DomainError("codebook must be a nonempty CxD matrix")
    squeeze = latent.dim() == 3
    if squeeze:
        latent = latent.unsqueeze(0)
    if latent.shape[1] != codebook.shape[1]:
        raise DomainError("latent channel dim must match codebook dim")
    b, d, h, w = latent.shape
    flat = latent.permute(0, 2, 3, 1).reshape(-1, d)
    idx = torch.empty(flat.shape[0], dtype=torch.long)
    # direct differences (not the matmul expansion) so results agree
    # exactly with a brute-force scan
    chunk = max(1, 2**22 // max(1, codebook.shape[0] * d))
    for start in range(0, flat.shape[0], chunk):
        part = flat[start : start + chunk]
        d2 = (part.unsqueeze(1) - codebook.unsqueeze(0)).pow(2).sum(-1)
        idx[start : start + chunk] = d2.argmin(dim=1)
    idx = idx.reshape(b, h, w)
    return idx[0] if squeeze else idx


class VQLabeler(nn.Module):
    """Encoder + codebook + decoder; latent sits at 1/8 image resolution."""

    def __init__(self, config: LabelerConfig | None = None):
        super().__init__()
        self.config = cfg = config or LabelerConfig()
        n, norm = cfg.base_channels, cfg.normalization
        enc = [
            nn.Conv2d(3, n, 3, padding=1),
            ResidualBlock(n, n, norm=norm == "channel"),
            nn.Conv2d(n, n, 4, stride=2, padding=1), _norm(norm, n), nn.LeakyReLU(0.2),
            ResidualBlock(n, n, norm=norm == "channel"),
            nn.Conv2d(n, 2 * n, 4, stride=2, padding=1), _norm(norm, 2 * n), nn.LeakyReLU(0.2),
            ResidualBlock(2 * n, 2 * n, norm=norm == "channel"),
            nn.Conv2d(2 * n, 2 * n, 4, stride=2, padding=1), _norm(norm, 2 * n), nn.LeakyReLU(0.2),
        ]
        if cfg.attention:
            enc.append(LatentSelfAttention(2 * n))
        enc.append(nn.Conv2d(2 * n, cfg.embed_dim, 3, padding=1))
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(cfg.embed_dim, 2 * n, 3, padding=1)]
        if cfg.attention:
            dec.append(LatentSelfAttention(2 * n))
        dec += [
            ResidualBlock(2 * n, 2 * n, norm=norm == "channel"),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * n, 2 * n, 3, padding=1), _norm(norm, 2 * n), nn.LeakyReLU(0.2),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * n, n, 3, padding=1), _norm(norm, n), nn.LeakyReLU(0.2),
            nn.Upsample(scale_factor=2, mode="nearest"),
            ResidualBlock(n, n, norm=norm == "channel"),
            nn.Conv2d(n, 3, 3, padding=1),
        ]
        self.decoder = nn.Sequential(*dec)
        bound = 1.0 / cfg.codebook_size
        self.codebook = nn.Parameter(
            torch.empty(cfg.codebook_size, cfg.embed_dim).uniform_(-bound, bound)
        )

    def _check_image(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        h, w = image.shape[-2:]
        if h % 8 or w % 8:
            raise DomainError(f"image dims must be multiples of 8, got {h}x{w}")
        return image

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        """Continuous latent, (B, D, H/8, W/8)."""
        return self.encoder(self._check_image(image))

    def codes(self, image: torch.Tensor) -> torch.Tensor:
        return nearest_code(self.encode(image), self.codebook)

    def label_map(self, image: torch.Tensor) -> torch.Tensor:
        """One-hot (B, C+1, H/8, W/8) map; channel 0 (fake) never used."""
        idx = self.codes(image)
        one_hot = F.one_hot(idx + 1, self.config.codebook_size + 1)
        return one_hot.permute(0, 3, 1, 2).float()

    def decode(self, quantized: torch.Tensor) -> torch.Tensor:
        return self.decoder(quantized)

    def vq_loss(self, image: torch.Tensor, extractor=None):
        """Reconstruction + embedding + commitment objective.

        Embedding/commitment are per-location squared distances (summed
        over the embedding dim, averaged over locations); gradients flow
        encoder-to-decoder via the straight-through estimator.
        """
        image = self._check_image(image)
        e = self.encoder(image)
        idx = nearest_code(e, self.codebook)
        m = self.codebook[idx].permute(0, 3, 1, 2)
        embedding = (e.detach() - m).pow(2).sum(dim=1).mean()
        commitment = (e - m.detach()).pow(2).sum(dim=1).mean()
        quantized = m.detach() + (e - e.detach())
        recon = torch.clamp(self.decoder(quantized), 0.0, 1.0)
        weights = LossWeights(lambda_mse=self.config.lambda_mse)
        recon_term = distortion(recon, image, weights, extractor)
        total = recon_term + embedding + self.config.commitment_weight * commitment
        return {
            "total": total,
            "reconstruction": recon_term,
            "embedding": embedding,
            "commitment": commitment,
        }


def fake_label_map(height: int, width: int, num_classes: int, batch: int = 1) -> torch.Tensor:
    """All-fake one-hot map: channel 0 set everywhere."""
    if height < 1 or width < 1 or num_classes < 1:
        raise DomainError("dims and class count must be positive")
    out = torch.zeros(batch, num_classes + 1, height, width)
    out[:, 0] = 1.0
    return out
