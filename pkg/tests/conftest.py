import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def make_texture_set(n: int, size: int = 64, seed: int = 0, families: int = 8) -> torch.Tensor:
    """Synthetic texture images, shaped (n,3,s,s): sinusoidal gratings in
    a few distinct orientation/frequency/color families, each with its own
    speckle level (high-frequency content that rate-constrained training
    blurs away, leaving room for adversarial restoration)."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / size
    params = []
    for _ in range(families):
        params.append(
            dict(
                angle=rng.uniform(0, np.pi),
                freq=rng.uniform(4, 14),
                color=rng.uniform(0.3, 0.7, size=3),
                amp=rng.uniform(0.12, 0.25),
                speckle=rng.uniform(0.04, 0.12),
            )
        )
    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        p = params[i % families]
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(
            2 * np.pi * p["freq"] * (np.cos(p["angle"]) * xs + np.sin(p["angle"]) * ys)
            + phase
        )
        speck = rng.normal(0, p["speckle"], (size, size))
        for c in range(3):
            images[i, c] = np.clip(p["color"][c] + p["amp"] * wave + speck, 0.0, 1.0)
    return torch.from_numpy(images)


@pytest.fixture
def texture_set():
    return make_texture_set
