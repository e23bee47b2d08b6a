"""Training losses over 2-channel complex images.

All functions take tape tensors laid out (..., 2, H, W) with channel 0
the real part and channel 1 the imaginary part, and reduce to a scalar
tensor. Targets may be plain arrays; they are lifted to constants.
"""

import math
from dataclasses import dataclass

import numpy as np

from .engine import ShapeMismatchError, Tensor

__all__ = [
    "LossWeights",
    "loss_mse",
    "loss_l1",
    "loss_perpendicular",
    "loss_psnr",
    "composite_loss",
]

_LN10 = math.log(10.0)


@dataclass(frozen=True)
class LossWeights:
    w_mse: float = 1.0
    w_l1: float = 1.0
    w_perp: float = 1.0
    w_psnr: float = 1.0

    def __post_init__(self):
        ws = (self.w_mse, self.w_l1, self.w_perp, self.w_psnr)
        if any(w < 0 for w in ws):
            raise ValueError("loss weights must be nonnegative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one loss weight must be positive")


def _lift(pred, target):
    if not isinstance(target, Tensor):
        target = pred.tape.const(np.asarray(target))
    if pred.shape != target.shape:
        raise ShapeMismatchError(
            f"loss shapes differ: {pred.shape} vs {target.shape}")
    return target


def _complex_parts(x):
    ax = x.ndim - 3
    if ax < 0 or x.shape[ax] != 2:
        raise ShapeMismatchError(
            f"expected (..., 2, H, W) complex layout, got {x.shape}")
    head = (slice(None),) * ax
    return x[head + (slice(0, 1),)], x[head + (slice(1, 2),)]


def _magnitude(x):
    re, im = _complex_parts(x)
    return (re * re + im * im).sqrt()


def _soft_max_floor(x, floor):
    # max(x, floor) written with primitives; differentiable off x == floor
    return (x + floor + (x - floor).abs()) * 0.5


def loss_mse(pred, target):
    target = _lift(pred, target)
    d = pred - target
    return (d * d).mean()


def loss_l1(pred, target):
    target = _lift(pred, target)
    return (pred - target).abs().mean()


def loss_perpendicular(pred, target, eps=1e-6):
    """Distance of each predicted phasor from the ray of the target.

    Per pixel: |Re(p)Im(t) - Im(p)Re(t)| / max(|t|, eps) + ||p| - |t||.
    The first term is the perpendicular offset from the target's
    direction, the second the radial error; phase-only mistakes and
    magnitude-only mistakes are both visible.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    target = _lift(pred, target)
    pr, pi = _complex_parts(pred)
    tr, ti = _complex_parts(target)
    cross = (pr * ti - pi * tr).abs()
    tmag = (tr * tr + ti * ti).sqrt()
    perp = cross / _soft_max_floor(tmag, eps)
    radial = (_magnitude(pred) - tmag).abs()
    return (perp + radial).mean()


def loss_psnr(pred, target, max_I=2048.0, eps=1e-8):
    """-20 log10(max_I / (magnitude RMSE + eps)); lower is better."""
    target = _lift(pred, target)
    d = _magnitude(pred) - _magnitude(target)
    rmse = (d * d).mean().sqrt()
    return (rmse + eps).log() * (20.0 / _LN10) - 20.0 * math.log10(max_I)


def composite_loss(pred, target, weights=LossWeights(), eps=1e-6,
                   max_I=2048.0, psnr_eps=1e-8):
    """Weighted sum of the four losses; zero-weight terms are skipped."""
    target = _lift(pred, target)
    total = None
    for w, term in (
        (weights.w_mse, lambda: loss_mse(pred, target)),
        (weights.w_l1, lambda: loss_l1(pred, target)),
        (weights.w_perp, lambda: loss_perpendicular(pred, target, eps=eps)),
        (weights.w_psnr, lambda: loss_psnr(pred, target, max_I=max_I,
                                           eps=psnr_eps)),
    ):
        if w == 0:
            continue
        piece = term() * w
        total = piece if total is None else total + piece
    return total
