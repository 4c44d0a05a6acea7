"""Building blocks shared by the codec, labeler, and discriminators."""

import torch
from torch import nn


class ChannelNorm(nn.Module):
    """Normalize over the channel dimension at every spatial position.

    Unlike instance/group norm the statistics are per-pixel, which keeps
    them stable across image regions of different content.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x):
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mean) * torch.rsqrt(var + self.eps) * self.gamma + self.beta


class ResidualBlock(nn.Module):
    """Two 3x3 convs with a skip; optional channel change via 1x1 shortcut."""

    def __init__(self, in_ch: int, out_ch: int, norm: bool = True, slope: float = 0.2):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm1 = ChannelNorm(out_ch) if norm else nn.Identity()
        self.norm2 = ChannelNorm(out_ch) if norm else nn.Identity()
        self.act = nn.LeakyReLU(slope)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.shortcut(x))


class LatentSelfAttention(nn.Module):
    """Single-head self-attention over the spatial grid (optional plug)."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = ChannelNorm(channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=1)
        q = q.reshape(b, c, h * w).transpose(1, 2)
        k = k.reshape(b, c, h * w)
        v = v.reshape(b, c, h * w).transpose(1, 2)
        attn = torch.softmax(q @ k / c**0.5, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.proj(out)
