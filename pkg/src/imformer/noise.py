"""Noise simulation in SNR units.

The reconstruction chain is normalized so that white complex noise of
std 1 at the input keeps a spatially-averaged std of exactly 1 after
every stage. Each step divides by the square root of the noise
variance fraction it keeps: 1/sqrt(mean |H|^2) for a k-space filter
applied to white noise (Parseval), 1/sqrt(f) for partial-Fourier zero
filling of white noise, and the composed-spectrum factor when the
steps are chained (see make_correlated_unit_noise). Noise level is
therefore a known constant of the data, not a per-scan unknown, and
corruption amounts to adding sigma * g(h,w) * n with n a unit-variance
correlated noise field.

FFTs are centered and orthonormal throughout, so every Parseval
statement here holds with no stray factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "ComplexImage",
    "GFactorMap",
    "KspaceFilter",
    "NoiseSpec",
    "fft2c",
    "ifft2c",
    "synth_gfactor",
    "apply_kspace_filter_snr_unit",
    "apply_partial_fourier_snr_unit",
    "make_correlated_unit_noise",
    "corrupt",
    "derive_seed",
]


# ---------------------------------------------------------------
# centered orthonormal FFT helpers
# ---------------------------------------------------------------

def fft2c(x, axes=(-2, -1)):
    """Centered 2D FFT, unitary norm, DC at the array center."""
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho"),
        axes=axes)


def ifft2c(x, axes=(-2, -1)):
    """Inverse of fft2c."""
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho"),
        axes=axes)


def derive_seed(global_seed, *index):
    """Per-sample seed, independent of worker layout.

    Hash-combines the run seed with any number of sample indices into
    a SeedSequence usable with numpy Generators.
    """
    return np.random.SeedSequence([int(global_seed) & 0xFFFFFFFF] + [int(i) for i in index])


# ---------------------------------------------------------------
# domain types
# ---------------------------------------------------------------

@dataclass
class ComplexImage:
    """A [t][h][w] complex series.

    Args:
        data: complex array of shape (T, H, W).
        pixel_intensity_scale: nominal max magnitude of the signal.
        snr_unit: set when any noise carried by the image has per-pixel
            std 1.0 by construction.
    """

    data: np.ndarray
    pixel_intensity_scale: float = 2048.0
    snr_unit: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.complexfloating):
            self.data = self.data.astype(np.complex128)
        if self.data.ndim != 3:
            raise ValueError(f"expected (T, H, W) data, got shape {self.data.shape}")
        t, h, w = self.data.shape
        if t < 1 or h < 8 or w < 8:
            raise ValueError(f"image too small: T={t}, H={h}, W={w} (need T>=1, H,W>=8)")

    @property
    def frames(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def copy(self):
        return replace(self, data=self.data.copy())


@dataclass
class GFactorMap:
    """Spatial noise-amplification map for parallel-imaging acceleration."""

    values: np.ndarray
    acceleration: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("g-factor map must be 2D (H, W)")
        if self.values.min() < 1.0 - 1e-12:
            raise ValueError(f"g-factor below 1.0: min={self.values.min()}")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class KspaceFilter:
    """Separable apodization window, one strength per (kh, kw) axis.

    kind "identity" is all ones. kind "raised_cosine" blends a flat
    window with a full Hann as strength goes 0 -> 1:
        w(i) = (1 - s) + s * hann(n)[i]
    """

    kind: str = "raised_cosine"
    strength: tuple = (0.5, 0.5)

    def axis_window(self, n, axis):
        if self.kind == "identity":
            return np.ones(n)
        if self.kind != "raised_cosine":
            raise ValueError(f"unknown filter kind {self.kind!r}")
        s = float(self.strength[axis])
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"filter strength must be in [0, 1], got {s}")
        return (1.0 - s) + s * np.hanning(n)


@dataclass(frozen=True)
class NoiseSpec:
    """Everything needed to corrupt one sample reproducibly."""

    acceleration: int = 3
    kspace_filter: KspaceFilter = field(default_factory=KspaceFilter)
    partial_fourier_fraction: float = 0.75
    noise_sigma: tuple = (0.5, 8.0)
    seed: int = 0

    def __post_init__(self):
        if not 2 <= int(self.acceleration) <= 6:
            raise ValueError(f"acceleration must be in [2, 6], got {self.acceleration}")
        f = self.partial_fourier_fraction
        if not 0.5 < f <= 1.0:
            raise ValueError(f"partial Fourier fraction must be in (0.5, 1], got {f}")
        lo, hi = self.noise_sigma
        if lo < 0 or hi < lo:
            raise ValueError(f"bad sigma range {self.noise_sigma}")


# ---------------------------------------------------------------
# g-factor synthesis
# ---------------------------------------------------------------

# kit convention: spatial mean of a synthesized map
def _gfactor_mean(R):
    return 1.0 + 0.35 * (R - 1)


def synth_gfactor(H, W, R, roughness=0.5, seed=0):
    """Synthesize a smooth g-factor map for acceleration R.

    A low-frequency Gaussian random field, shifted and scaled so the
    minimum is exactly 1.0 and the spatial mean is exactly
    1 + 0.35*(R-1). roughness in [0, 1] sets how short the spatial
    correlation is; 0 is the degenerate flat map at the mean level.

    Args:
        H, W: map size.
        R: acceleration, integer in [2, 6].
        roughness: 0 (flat) to 1 (grainy).
        seed: field seed; same seed gives a bit-identical map.

    Returns:
        GFactorMap with min == 1.0 and acceleration R.
    """
    R = int(R)
    if not 2 <= R <= 6:
        raise ValueError(f"acceleration must be in [2, 6], got {R}")
    if not 0.0 <= roughness <= 1.0:
        raise ValueError(f"roughness must be in [0, 1], got {roughness}")
    mean_level = _gfactor_mean(R)
    if roughness == 0.0:
        return GFactorMap(np.full((H, W), mean_level), R)

    rng = np.random.default_rng(derive_seed(seed, H, W, R))
    white = rng.standard_normal((H, W))
    # correlation length shrinks as roughness grows; wrap keeps the
    # field stationary so min/max are not edge artifacts
    sigma = max(1.5, 0.25 * min(H, W) / (1.0 + 9.0 * roughness))
    fld = gaussian_filter(white, sigma=sigma, mode="wrap")
    lo, hi = fld.min(), fld.max()
    if hi - lo < 1e-12:
        return GFactorMap(np.full((H, W), mean_level), R)
    unit = (fld - lo) / (hi - lo)  # in [0, 1], min exactly 0
    amp = (mean_level - 1.0) / unit.mean()
    return GFactorMap(1.0 + amp * unit, R)


# ---------------------------------------------------------------
# SNR-unit reconstruction stages
# ---------------------------------------------------------------

def apply_kspace_filter_snr_unit(img: ComplexImage, filt: KspaceFilter) -> ComplexImage:
    """Apodize k-space per frame, renormalized to preserve unit noise.

    The window H(k) = wh(kh) * ww(kw) is divided by
    sqrt(mean |H|^2), so by Parseval unit-variance white noise in
    keeps unit spatially-averaged variance out.
    """
    t, h, w = img.data.shape
    wh = filt.axis_window(h, 0)
    ww = filt.axis_window(w, 1)
    win = wh[:, None] * ww[None, :]
    mean_sq = float(np.mean(np.abs(win) ** 2))
    if mean_sq == 0.0:
        raise ValueError("all-zero k-space filter")
    k = fft2c(img.data)
    k *= win / np.sqrt(mean_sq)
    return replace(img, data=ifft2c(k))


def apply_partial_fourier_snr_unit(img: ComplexImage, f: float) -> ComplexImage:
    """Zero-fill the trailing phase-encode lines, rescaled by 1/sqrt(f).

    The trailing (1-f) fraction of k-space columns (phase encode =
    last axis, centered layout) is zeroed. Zero filling scales the
    spatially-averaged noise variance by exactly f, so dividing by
    sqrt(f) restores unit variance. Exact when f*W is an integer;
    otherwise off by less than one line's worth.
    """
    if not 0.5 < f <= 1.0:
        raise ValueError(f"partial Fourier fraction must be in (0.5, 1], got {f}")
    w = img.data.shape[-1]
    kept = int(round(f * w))
    if kept >= w:
        return img.copy()
    k = fft2c(img.data)
    k[..., kept:] = 0.0
    return replace(img, data=ifft2c(k) / np.sqrt(f))


def make_correlated_unit_noise(shape, filt: KspaceFilter, f: float, seed) -> ComplexImage:
    """Unit-variance correlated noise: white complex noise through the chain.

    White complex Gaussian noise (std 1/sqrt(2) per component, complex
    std 1) goes through the k-space filter and then partial-Fourier
    zero filling. The renormalization at each step is computed against
    the noise spectrum actually entering that step: after the filter
    the spectrum is no longer white, so the partial-Fourier step must
    divide by the variance fraction its mask really keeps, not by the
    white-input value f. Both steps together reduce to a single
    composed transfer function M(k) scaled by 1/sqrt(mean |M|^2),
    which keeps the spatially-averaged std at exactly 1 after every
    step; the standalone stage functions are the white-input special
    cases of this rule.

    Args:
        shape: (T, H, W).
        filt: k-space apodization.
        f: partial Fourier fraction, in (0.5, 1].
        seed: int or SeedSequence.

    Returns:
        ComplexImage flagged snr_unit. Frames are independent.
    """
    if not 0.5 < f <= 1.0:
        raise ValueError(f"partial Fourier fraction must be in (0.5, 1], got {f}")
    t, h, w = shape
    rng = np.random.default_rng(seed)
    white = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    win = filt.axis_window(h, 0)[:, None] * filt.axis_window(w, 1)[None, :]
    mask = np.ones(w)
    kept = int(round(f * w))
    if kept < w:
        mask[kept:] = 0.0
    m = win * mask[None, :]
    mean_sq = float(np.mean(np.abs(m) ** 2))
    if mean_sq == 0.0:
        raise ValueError("filter and partial-Fourier mask leave no k-space energy")
    k = fft2c(white) * (m / np.sqrt(mean_sq))
    return ComplexImage(ifft2c(k), snr_unit=True)


def corrupt(clean: ComplexImage, g: GFactorMap, spec: NoiseSpec):
    """Add sigma * g(h,w) * n to a clean image.

    sigma is drawn uniformly from spec.noise_sigma and n comes from
    make_correlated_unit_noise, both seeded from spec.seed alone, so
    (clean, g, spec) -> output is bit-reproducible.

    Returns:
        (noisy ComplexImage, sigma_used). The noisy image is not
        flagged snr_unit: its noise std is sigma * g, not 1.
    """
    t, h, w = clean.data.shape
    if (g.height, g.width) != (h, w):
        raise ValueError(
            f"g-factor map {g.values.shape} does not match image spatial dims {(h, w)}")
    ss = np.random.SeedSequence(spec.seed)
    sigma_ss, noise_ss = ss.spawn(2)
    lo, hi = spec.noise_sigma
    sigma = float(np.random.default_rng(sigma_ss).uniform(lo, hi))
    n = make_correlated_unit_noise(
        clean.data.shape, spec.kspace_filter, spec.partial_fourier_fraction, noise_ss)
    noisy = clean.data + sigma * g.values[None, :, :] * n.data
    return ComplexImage(noisy, clean.pixel_intensity_scale, snr_unit=False), sigma
