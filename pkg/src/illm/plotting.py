"""Rate curves: one panel per metric, one polyline per report file."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import DomainError
from .metrics import REPORT_SCHEMA_VERSION

#: metric key -> (panel title, lower_is_better)
_PANEL_METRICS = {
    "fid": ("FID", True),
    "kid_mean": ("KID", True),
    "mean_psnr": ("PSNR (dB)", False),
    "mean_ms_ssim": ("MS-SSIM", False),
}


def _load_points(path) -> tuple[str, list[dict]]:
    """A report file holds one operating point or a list of them."""
    data = json.loads(Path(path).read_text())
    reports = data if isinstance(data, list) else [data]
    points = []
    label = Path(path).stem
    for rep in reports:
        if rep.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise DomainError(f"{path}: unsupported report schema version")
        label = rep.get("codec_id", label)
        points.append(rep["aggregate"])
    points.sort(key=lambda p: p.get("mean_bpp", 0.0))
    return label, points


def plot_rd(report_paths, out_path) -> list[str]:
    """Write the rate-metric figure; returns any warnings raised."""
    if not report_paths:
        raise DomainError("need at least one report")
    curves = [_load_points(p) for p in report_paths]
    shared = set(_PANEL_METRICS)
    for _, points in curves:
        available = set()
        for p in points:
            available |= set(p)
        shared &= available
    notes = []
    dropped = set(_PANEL_METRICS) - shared
    for name in sorted(dropped):
        msg = f"metric {name!r} missing from some reports; panel dropped"
        notes.append(msg)
        warnings.warn(msg)
    panels = [m for m in _PANEL_METRICS if m in shared]
    if not panels:
        raise DomainError("no shared metrics across reports")

    with plt.rc_context({"svg.hashsalt": "illm", "figure.dpi": 96}):
        fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2))
        if len(panels) == 1:
            axes = [axes]
        for ax, metric in zip(axes, panels):
            title, lower_better = _PANEL_METRICS[metric]
            for label, points in curves:
                xs = [p["mean_bpp"] for p in points]
                ys = [p[metric] for p in points]
                ax.plot(xs, ys, marker="o", label=label)
            ax.set_xlabel("bpp")
            arrow = "↓" if lower_better else "↑"
            ax.set_title(f"{title} {arrow}")
            ax.grid(True, alpha=0.3)
        axes[0].legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return notes
