"""Synthetic cine phantoms: soft ellipses, pulsation, smooth phase.

Stands in for clinical series at desk scale. Each phantom is a sum of
rotated soft-edged ellipses whose radii either pulsate over the frame
axis (mode "cine") or taper like slices through an ellipsoid (mode
"stack", the 3D surrogate), multiplied by a slowly varying complex
phase. Magnitudes stay within the nominal intensity scale and every
draw is a pure function of the spec.
"""

from dataclasses import dataclass

import numpy as np

from .noise import ComplexImage, derive_seed
from .probes import SPATIAL_HALF, ProbePoint

MODES = ("cine", "stack")


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    frames: int = 8
    n_ellipses: int = 6
    motion: float = 0.05
    phase_roll: float = 1.0
    intensity_scale: float = 2048.0
    mode: str = "cine"
    seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError(f"phantom needs H, W >= 8, got {self.height}x{self.width}")
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.n_ellipses < 1:
            raise ValueError(f"need at least one ellipse, got {self.n_ellipses}")
        # pulsation must keep radii strictly positive
        if not 0.0 <= self.motion < 1.0:
            raise ValueError(f"motion must be in [0, 1), got {self.motion}")
        if self.phase_roll < 0.0:
            raise ValueError(f"phase_roll must be >= 0, got {self.phase_roll}")
        if self.intensity_scale <= 0.0:
            raise ValueError(f"intensity_scale must be positive, got {self.intensity_scale}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def _ellipse_field(H, W, cy, cx, ry, rx, theta, soft):
    """Soft indicator of a rotated ellipse: ~1 inside, ~0 outside.

    soft is the edge width as a fraction of the radius; the boundary
    sits where the normalized elliptical distance crosses 1.
    """
    y = np.arange(H, dtype=np.float64)[:, None] - cy
    x = np.arange(W, dtype=np.float64)[None, :] - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (ct * y + st * x) / ry
    v = (-st * y + ct * x) / rx
    d = np.sqrt(u * u + v * v)
    return 1.0 / (1.0 + np.exp((d - 1.0) / soft))


def _smooth_phase(H, W, rng, strength):
    """Low-order polynomial phase surface scaled by strength."""
    u = np.linspace(-1.0, 1.0, H)[:, None]
    v = np.linspace(-1.0, 1.0, W)[None, :]
    c = rng.uniform(-1.0, 1.0, size=6)
    poly = c[0] * u + c[1] * v + c[2] * u * v + c[3] * u * u + c[4] * v * v + c[5]
    return strength * np.pi * poly


def _radius_factors(spec: PhantomSpec, phases):
    """Per-(frame, ellipse) multiplicative radius factor."""
    T = spec.frames
    t = np.arange(T, dtype=np.float64)[:, None]
    if spec.mode == "cine":
        return 1.0 + spec.motion * np.sin(2.0 * np.pi * t / T + phases[None, :])
    # stack: frames are parallel slices through an ellipsoid, so the
    # in-plane radius tapers away from the equator
    if T == 1:
        z = np.zeros((1, 1))
    else:
        z = np.linspace(-0.6, 0.6, T)[:, None]
    taper = np.sqrt(1.0 - z * z)
    return taper * (1.0 + spec.motion * np.sin(phases[None, :]))


def gen_phantom(spec: PhantomSpec) -> ComplexImage:
    """Render the spec into a noise-free complex series.

    Returns a ComplexImage of shape (frames, height, width) whose
    magnitudes lie in [0, intensity_scale]; the global peak is placed
    at 0.9 * intensity_scale to leave headroom for noise.
    """
    H, W, T = spec.height, spec.width, spec.frames
    rng = np.random.default_rng(
        derive_seed(spec.seed, H, W, T, spec.n_ellipses))
    n = spec.n_ellipses
    cy = rng.uniform(0.25 * H, 0.75 * H, size=n)
    cx = rng.uniform(0.25 * W, 0.75 * W, size=n)
    rmin = 0.08 * min(H, W)
    rmax = 0.22 * min(H, W)
    ry = rng.uniform(rmin, rmax, size=n)
    rx = rng.uniform(rmin, rmax, size=n)
    theta = rng.uniform(0.0, np.pi, size=n)
    amp = rng.uniform(0.3, 1.0, size=n)
    pulse_phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    soft = rng.uniform(0.04, 0.10, size=n)
    phase = _smooth_phase(H, W, rng, spec.phase_roll)

    factors = _radius_factors(spec, pulse_phase)
    mag = np.zeros((T, H, W))
    for t in range(T):
        for i in range(n):
            f = factors[t, i]
            mag[t] += amp[i] * _ellipse_field(
                H, W, cy[i], cx[i], ry[i] * f, rx[i] * f, theta[i], soft[i])
    peak = mag.max()
    if peak > 0.0:
        mag *= 0.9 * spec.intensity_scale / peak
    data = mag * np.exp(1j * phase)[None, :, :]
    return ComplexImage(data, pixel_intensity_scale=spec.intensity_scale,
                        snr_unit=False)


def pick_probe_points(img: ComplexImage, n, seed=0, epsilon=5.0):
    """n interior points with strong spatial structure.

    Resolution probing is only informative where the image has edges,
    so candidates are ranked by spatial gradient magnitude; the final
    set is a seeded draw from the top decile. Points keep the margin
    the probe estimator needs.

    Raises ValueError if the interior cannot supply n candidates.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 points, got {n}")
    mag = np.abs(img.data)
    gy, gx = np.gradient(mag, axis=(1, 2))
    score = np.hypot(gy, gx)
    m = SPATIAL_HALF
    score[:, :m, :] = 0.0
    score[:, -m:, :] = 0.0
    score[:, :, :m] = 0.0
    score[:, :, -m:] = 0.0
    flat = score.ravel()
    order = np.argsort(flat, kind="stable")[::-1]
    pool = max(n, int(np.count_nonzero(flat > 0) * 0.1))
    pool = min(pool, int(np.count_nonzero(flat > 0)))
    if pool < n:
        raise ValueError(
            f"only {pool} usable interior points, need {n}")
    rng = np.random.default_rng(derive_seed(seed, n, img.frames))
    chosen = rng.choice(order[:pool], size=n, replace=False)
    points = []
    for idx in chosen:
        t, r, c = np.unravel_index(int(idx), score.shape)
        points.append(ProbePoint(frame=int(t), row=int(r), col=int(c),
                                 epsilon=float(epsilon)))
    return points
