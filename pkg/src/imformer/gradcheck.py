"""Finite-difference oracles for the tape.

Two modes. Coordinate mode perturbs every element of every leaf and is
only sane for small tensors. Directional mode draws one random unit
direction across all leaves and compares a single directional
derivative against the analytic dot product; cost is two forward
passes regardless of parameter count, so it scales to full models.

Relative error is |analytic - numeric| / (|analytic| + |numeric| + 1e-12),
from central differences in float64. Inputs are promoted to float64
before differencing; 32-bit differencing is hopeless.
"""

from __future__ import annotations

import numpy as np

from .engine import Tape, backward

__all__ = ["finite_diff_check", "rel_err"]

_DENOM_EPS = 1e-12


def rel_err(analytic, numeric):
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + _DENOM_EPS)


def _eval(fn, arrays):
    tape = Tape()
    leaves = [tape.leaf(a, requires_grad=True) for a in arrays]
    out = fn(tape, *leaves)
    return float(out.data.reshape(())), leaves, out


def _directional_error(fn, arrays, rng, step):
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    _, leaves, out = _eval(fn, arrays)
    grads = backward(out)

    dirs = [rng.standard_normal(a.shape) for a in arrays]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    if norm == 0.0:
        return 0.0
    dirs = [d / norm for d in dirs]

    analytic = 0.0
    for lf, d in zip(leaves, dirs):
        g = grads.of(lf)
        if g is not None:
            analytic += float((g * d).sum())

    plus, _, _ = _eval(fn, [a + step * d for a, d in zip(arrays, dirs)])
    minus, _, _ = _eval(fn, [a - step * d for a, d in zip(arrays, dirs)])
    numeric = (plus - minus) / (2.0 * step)
    return rel_err(analytic, numeric)


def _coordinate_error(fn, arrays, step):
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    _, leaves, out = _eval(fn, arrays)
    grads = backward(out)
    worst = 0.0
    for k, a in enumerate(arrays):
        g = grads.of(leaves[k])
        if g is None:
            g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            fp, _, _ = _eval(fn, arrays)
            flat[j] = keep - step
            fm, _, _ = _eval(fn, arrays)
            flat[j] = keep
            numeric = (fp - fm) / (2.0 * step)
            worst = max(worst, rel_err(float(gflat[j]), numeric))
    return worst


def finite_diff_check(fn, arrays, step=1e-5, mode="directional", seeds=(0,)):
    """Worst relative error between analytic and numeric derivatives.

    Args:
        fn: callable (tape, *leaf_tensors) -> scalar Tensor. Must be a
            pure function of its tensor arguments.
        arrays: list of float arrays; each becomes a leaf with
            requires_grad set.
        step: central-difference step, must be > 0.
        mode: "directional" or "coordinate".
        seeds: rng seeds for directional mode; one direction per seed.

    Returns:
        Max over coordinates (or directions) of
        |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if not isinstance(arrays, (list, tuple)):
        arrays = [arrays]
    if mode == "coordinate":
        return _coordinate_error(fn, arrays, step)
    if mode != "directional":
        raise ValueError(f"unknown mode {mode!r}")
    worst = 0.0
    for s in seeds:
        rng = np.random.default_rng(s)
        worst = max(worst, _directional_error(fn, arrays, rng, step))
    return worst
