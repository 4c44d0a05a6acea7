"""Distortion and statistical-fidelity metrics plus dataset evaluation.

Aggregate fidelity uses features from a pluggable extractor registry
(the default is a small fixed-seed conv network; any stronger extractor
with the same interface can be registered).  Bitrates always come from
serialized container byte lengths, never from entropy estimates.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import linalg
from scipy.ndimage import convolve1d

from . import entropy
from .errors import DomainError
from .losses import PerceptualExtractor, perceptual_distance

REPORT_SCHEMA_VERSION = 1

# -- reference metrics ---------------------------------------------------------


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images; inf when equal."""
    if x.shape != x_hat.shape:
        raise DomainError("psnr inputs must share a shape")
    mse = float(np.mean((np.asarray(x, np.float64) - np.asarray(x_hat, np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_K1, _K2 = 0.01, 0.03


def _gaussian_kernel(size=11, sigma=1.5):
    half = size // 2
    g = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    return g / g.sum()


def _ssim_components(a: np.ndarray, b: np.ndarray):
    """Mean SSIM and contrast-structure terms for one scale (HxWxC)."""
    kernel = _gaussian_kernel()

    def blur(img):
        out = convolve1d(img, kernel, axis=0, mode="reflect")
        return convolve1d(out, kernel, axis=1, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    c1, c2 = _K1**2, _K2**2
    luminance = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return float(np.mean(luminance * cs)), float(np.mean(cs))


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Multi-scale SSIM, 5 scales when the images are large enough."""
    if x.shape != x_hat.shape:
        raise DomainError("ms_ssim inputs must share a shape")
    a = np.asarray(x, np.float64)
    b = np.asarray(x_hat, np.float64)
    min_dim = min(a.shape[0], a.shape[1])
    if min_dim < 11:
        raise DomainError("image too small for even one SSIM scale")
    # scale s needs min_dim >= 10 * 2^(s-1) + 1 (11-tap window)
    scales = 1
    while scales < 5 and min_dim >= 10 * 2**scales + 1:
        scales += 1
    if scales < 5:
        warnings.warn(f"image too small for 5 scales; using {scales}")
    weights = _MSSSIM_WEIGHTS[:scales] / _MSSSIM_WEIGHTS[:scales].sum()
    value = 1.0
    for level in range(scales):
        ssim_mean, cs_mean = _ssim_components(a, b)
        term = ssim_mean if level == scales - 1 else cs_mean
        value *= max(term, 0.0) ** weights[level]
        if level != scales - 1:
            a, b = _downsample2(a), _downsample2(b)
    return float(value)


# -- feature sets and statistical fidelity --------------------------------------


@dataclass
class FeatureSet:
    features: np.ndarray  # (N, D)
    extractor_id: str
    crop_policy: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 2:
            raise DomainError("feature set needs at least 2 rows")
        if not np.isfinite(self.features).all():
            raise DomainError("features must be finite")


def _check_comparable(a: FeatureSet, b: FeatureSet):
    if a.extractor_id != b.extractor_id:
        raise DomainError("feature sets come from different extractors")
    if a.crop_policy != b.crop_policy:
        raise DomainError("feature sets use different crop policies")
    if a.features.shape[1] != b.features.shape[1]:
        raise DomainError("feature dimensionality differs")


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Frechet distance between Gaussian fits of the two feature sets.

    The cross-covariance square root is computed via the symmetric
    eigendecomposition of S_a^1/2 S_b S_a^1/2; tiny negative eigenvalues
    from numerical noise are clamped to zero.
    """
    _check_comparable(a, b)
    mu_a, mu_b = a.features.mean(0), b.features.mean(0)
    cov_a = np.cov(a.features, rowvar=False)
    cov_b = np.cov(b.features, rowvar=False)
    evals_a, evecs_a = linalg.eigh(cov_a)
    root_a = (evecs_a * np.sqrt(np.clip(evals_a, 0.0, None))) @ evecs_a.T
    middle = root_a @ cov_b @ root_a
    evals = linalg.eigvalsh(0.5 * (middle + middle.T))
    trace_sqrt = np.sqrt(np.clip(evals, 0.0, None)).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def _unbiased_mmd2(x: np.ndarray, y: np.ndarray) -> float:
    m, n = x.shape[0], y.shape[0]
    kxx = _poly_kernel(x, x)
    kyy = _poly_kernel(y, y)
    kxy = _poly_kernel(x, y)
    sum_xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    sum_yy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sum_xx + sum_yy - 2.0 * kxy.mean())


def kid(
    a: FeatureSet,
    b: FeatureSet,
    subset_size: int | None = None,
    n_subsets: int = 100,
    seed: int = 0,
) -> tuple[float, float]:
    """Kernel distance: unbiased MMD^2 with the cubic polynomial kernel,
    bootstrapped over subsets sampled with replacement across rounds.

    The unbiased estimator can legitimately go negative.
    """
    _check_comparable(a, b)
    n_a, n_b = a.features.shape[0], b.features.shape[0]
    if subset_size is None:
        subset_size = min(1000, n_a, n_b)
    if subset_size > min(n_a, n_b):
        raise DomainError("subset_size exceeds the smaller feature set")
    if subset_size < 2:
        raise DomainError("subset_size must be at least 2")
    rng = np.random.default_rng(seed)
    values = np.empty(n_subsets)
    for i in range(n_subsets):
        ia = rng.choice(n_a, subset_size, replace=False)
        ib = rng.choice(n_b, subset_size, replace=False)
        values[i] = _unbiased_mmd2(a.features[ia], b.features[ib])
    return float(values.mean()), float(values.std())


# -- feature extraction ----------------------------------------------------------


class TinyFeatureExtractor:
    """Fixed-seed conv feature extractor with a global-pooled output."""

    def __init__(self, dim: int = 128, seed: int = 0xFEA7):
        self.dim = dim
        self.net = PerceptualExtractor(seed=seed, channels=(16, 32, 64, dim))

    def __call__(self, image: np.ndarray) -> np.ndarray:
        t = torch.from_numpy(np.asarray(image, np.float32)).permute(2, 0, 1).unsqueeze(0)
        with torch.no_grad():
            feats = self.net(t)[-1]
        return feats.mean(dim=(2, 3))[0].numpy().astype(np.float64)


_EXTRACTORS = {"tiny": TinyFeatureExtractor}
_CROP_POLICIES = ("whole-resized", "tiled-256")
_RESIZE_TO = 299


def register_extractor(name: str, factory) -> None:
    _EXTRACTORS[name] = factory


def _resize(image: np.ndarray, width: int, height: int) -> np.ndarray:
    img = Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8))
    out = img.resize((width, height), Image.BILINEAR)
    return np.asarray(out, np.float32) / 255.0


def extract_features(
    images, extractor_id: str = "tiny", crop_policy: str = "whole-resized"
) -> FeatureSet:
    """Deterministic features for a list of HxWx3 images."""
    if extractor_id not in _EXTRACTORS:
        raise DomainError(f"unknown extractor {extractor_id!r}")
    if crop_policy not in _CROP_POLICIES:
        raise DomainError(f"unknown crop policy {crop_policy!r}")
    extractor = _EXTRACTORS[extractor_id]()
    rows = []
    for image in images:
        if crop_policy == "whole-resized":
            rows.append(extractor(_resize(image, _RESIZE_TO, _RESIZE_TO)))
        else:
            h, w = image.shape[:2]
            if h < 256 or w < 256:
                rows.append(extractor(_resize(image, 256, 256)))
                continue
            for i in range(h // 256):
                for j in range(w // 256):
                    tile = image[i * 256 : (i + 1) * 256, j * 256 : (j + 1) * 256]
                    rows.append(extractor(tile))
    return FeatureSet(np.stack(rows), extractor_id, crop_policy)


# -- dataset evaluation -------------------------------------------------------------


@dataclass
class MetricsReport:
    codec_id: str
    dataset_id: str
    per_image: list
    aggregate: dict
    skipped: list = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        data = json.loads(text)
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise DomainError("unsupported report schema version")
        return cls(**data)


class IdentityCodec:
    """Lossless pass-through codec; useful for validating the pipeline."""

    def compress(self, image: np.ndarray) -> bytes:
        h, w = image.shape[:2]
        payload = np.ascontiguousarray(image, dtype=np.float32).tobytes()
        return entropy.serialize_container([payload], (w, h), 0)

    def decompress(self, data: bytes) -> np.ndarray:
        c = entropy.parse_container(data)
        arr = np.frombuffer(c.streams[0], dtype=np.float32)
        return arr.reshape(c.orig_height, c.orig_width, 3).copy()


def load_image(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, np.float32) / 255.0


def save_image(path, image: np.ndarray) -> None:
    arr = (np.clip(image, 0.0, 1.0) * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def evaluate_codec(
    codec,
    dataset_dir,
    extractor_id: str = "tiny",
    crop_policy: str = "whole-resized",
    codec_id: str = "codec",
    kid_subset_size: int | None = None,
    kid_subsets: int = 100,
    seed: int = 0,
    perceptual=None,
) -> MetricsReport:
    """Compress every image through the real bitstream path and report
    reference metrics plus dataset-level FID/KID."""
    dataset_dir = Path(dataset_dir)
    paths = sorted(
        p for p in dataset_dir.iterdir() if p.suffix.lower() in (".png", ".ppm", ".jpg", ".jpeg", ".bmp")
    )
    perceptual = perceptual or PerceptualExtractor()
    per_image, skipped = [], []
    originals, recons = [], []
    for path in paths:
        try:
            image = load_image(path)
        except Exception as exc:  # unreadable image: warn and record
            warnings.warn(f"skipping unreadable image {path.name}: {exc}")
            skipped.append(path.name)
            continue
        data = codec.compress(image)
        recon = codec.decompress(data)
        h, w = image.shape[:2]
        with torch.no_grad():
            pd = perceptual_distance(
                torch.from_numpy(recon).permute(2, 0, 1).unsqueeze(0),
                torch.from_numpy(image).permute(2, 0, 1).unsqueeze(0),
                perceptual,
            )
        per_image.append(
            {
                "name": path.name,
                "bpp": entropy.container_bpp(data, w, h),
                "psnr": psnr(image, recon),
                "ms_ssim": ms_ssim(image, recon),
                "perceptual_distance": float(pd),
            }
        )
        originals.append(image)
        recons.append(recon)
    if len(originals) < 2:
        raise DomainError("need at least 2 decodable images for FID/KID")
    feats_orig = extract_features(originals, extractor_id, crop_policy)
    feats_recon = extract_features(recons, extractor_id, crop_policy)
    subset = kid_subset_size or min(1000, feats_orig.features.shape[0], feats_recon.features.shape[0])
    kid_mean, kid_std = kid(feats_orig, feats_recon, subset, kid_subsets, seed)
    aggregate = {
        "fid": fid(feats_orig, feats_recon),
        "kid_mean": kid_mean,
        "kid_std": kid_std,
        "mean_bpp": float(np.mean([m["bpp"] for m in per_image])),
        "mean_psnr": float(np.mean([m["psnr"] for m in per_image])),
        "mean_ms_ssim": float(np.mean([m["ms_ssim"] for m in per_image])),
    }
    return MetricsReport(codec_id, dataset_dir.name, per_image, aggregate, skipped)
