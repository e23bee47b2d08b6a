"""Evaluation metrics on magnitude images, plus their CSV record form.

Unlike the losses these are plain-array functions: nothing here needs
a gradient. Complex inputs are reduced to magnitudes first; real
inputs are taken as already-magnitude images.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "MetricsRecord",
    "METRICS_CSV_HEADER",
    "metric_psnr",
    "metric_ssim",
    "ssim_components",
    "compute_metrics",
    "metrics_to_csv",
]

PSNR_CAP_DB = 200.0
METRICS_CSV_HEADER = "sample_id,mse,l1,psnr,ssim"

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _magnitude(x):
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return np.abs(x).astype(np.float64)
    return x.astype(np.float64)


def _pair(pred, target):
    a, b = _magnitude(pred), _magnitude(target)
    if a.shape != b.shape:
        raise ValueError(f"metric shapes differ: {a.shape} vs {b.shape}")
    return a, b


def metric_psnr(pred, target, max_I=2048.0):
    """20 log10(max_I / magnitude RMSE), capped at 200 dB."""
    a, b = _pair(pred, target)
    rmse = float(np.sqrt(np.mean((a - b) ** 2)))
    if rmse == 0.0:
        return PSNR_CAP_DB
    return float(min(20.0 * math.log10(max_I / rmse), PSNR_CAP_DB))


def _gaussian_window():
    half = (_SSIM_WINDOW - 1) / 2.0
    g = np.exp(-((np.arange(_SSIM_WINDOW) - half) ** 2)
               / (2.0 * _SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_maps(a, b, max_I):
    """Luminance and contrast-structure maps on the valid interior."""
    win = _gaussian_window()
    c1 = (0.01 * max_I) ** 2
    c2 = (0.03 * max_I) ** 2

    def smooth(img):
        # direct windowed dot product: bit-deterministic, and exactly
        # symmetric under swapping the two images
        patches = sliding_window_view(img, (_SSIM_WINDOW, _SSIM_WINDOW))
        return np.einsum("hwuv,uv->hw", patches, win)

    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def _ssim_frames(pred, target):
    a, b = _pair(pred, target)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        a = a.reshape(-1, a.shape[-2], a.shape[-1])
        b = b.reshape(-1, b.shape[-2], b.shape[-1])
    if a.shape[-2] < _SSIM_WINDOW or a.shape[-1] < _SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape[-2]}x{a.shape[-1]} smaller than the "
            f"{_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    return a, b


def metric_ssim(pred, target, max_I=2048.0):
    """Mean local SSIM, Gaussian-weighted 11x11 patches, per-frame mean."""
    a, b = _ssim_frames(pred, target)
    vals = []
    for fa, fb in zip(a, b):
        lum, cs = _ssim_maps(fa, fb, max_I)
        vals.append(np.mean(lum * cs))
    return float(np.mean(vals))


def ssim_components(pred, target, max_I=2048.0):
    """(mean luminance term, mean contrast-structure term)."""
    a, b = _ssim_frames(pred, target)
    lums, css = [], []
    for fa, fb in zip(a, b):
        lum, cs = _ssim_maps(fa, fb, max_I)
        lums.append(np.mean(lum))
        css.append(np.mean(cs))
    return float(np.mean(lums)), float(np.mean(css))


@dataclass
class MetricsRecord:
    sample_id: str
    mse: float
    l1: float
    psnr: float
    ssim: float
    n_pixels: int

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim {self.ssim} outside [-1, 1]")
        if self.n_pixels < 1:
            raise ValueError("n_pixels must be positive")

    def csv_row(self):
        return (f"{self.sample_id},{self.mse:.10g},{self.l1:.10g},"
                f"{self.psnr:.10g},{self.ssim:.10g}")


def compute_metrics(pred, target, max_I=2048.0, sample_id=""):
    a, b = _pair(pred, target)
    return MetricsRecord(
        sample_id=sample_id,
        mse=float(np.mean((a - b) ** 2)),
        l1=float(np.mean(np.abs(a - b))),
        psnr=metric_psnr(a, b, max_I=max_I),
        ssim=metric_ssim(a, b, max_I=max_I),
        n_pixels=int(a.size),
    )


def metrics_to_csv(records):
    lines = [METRICS_CSV_HEADER]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"
