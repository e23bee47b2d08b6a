"""Parameter update rules for the training loop.

Two rules behind one entry point: adamw (decoupled weight decay) and
sophia, a clipped quasi-second-order rule that divides a gradient EMA
by a periodically refreshed diagonal curvature estimate. Both mutate
Param values in place and keep their slots in a plain state dict keyed
by parameter name, so state survives nothing it shouldn't.
"""

from dataclasses import dataclass

import numpy as np


class OptimDiverged(RuntimeError):
    """A non-finite gradient or loss reached the optimizer."""


@dataclass(frozen=True)
class OptimHyper:
    kind: str = "adamw"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    # sophia only: per-coordinate trust radius and curvature cadence
    rho: float = 0.01
    curvature_every: int = 10

    def __post_init__(self):
        if self.kind not in ("adamw", "sophia"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must be in [0, 1): {self.beta1}, {self.beta2}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.rho <= 0.0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.curvature_every < 1:
            raise ValueError(f"curvature_every must be >= 1, got {self.curvature_every}")


def init_state(params):
    """Fresh moment slots, all zero.

    The second slot is the squared-gradient accumulator: adamw updates
    it every step, sophia only on curvature-refresh steps.
    """
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ValueError("parameter names must be unique")
    return {
        "step": 0,
        "m": {p.name: np.zeros_like(p.value) for p in params},
        "v": {p.name: np.zeros_like(p.value) for p in params},
    }


def _grad_of(p, grads):
    g = grads.get(p.name)
    if g is None:
        return np.zeros_like(p.value)
    return g


def check_finite(params, grads):
    for p in params:
        g = grads.get(p.name)
        if g is not None and not np.all(np.isfinite(g)):
            raise OptimDiverged(f"non-finite gradient in {p.name}")


def adamw_step(params, grads, state, hyper: OptimHyper):
    state["step"] += 1
    t = state["step"]
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = _grad_of(p, grads)
        m = state["m"][p.name]
        v = state["v"][p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        p.value -= (hyper.lr * (step + hyper.weight_decay * p.value)).astype(
            p.value.dtype, copy=False)


def sophia_step(params, grads, state, hyper: OptimHyper):
    state["step"] += 1
    t = state["step"]
    b1, b2 = hyper.beta1, hyper.beta2
    refresh = (t - 1) % hyper.curvature_every == 0
    for p in params:
        g = _grad_of(p, grads)
        m = state["m"][p.name]
        m *= b1
        m += (1.0 - b1) * g
        h = state["v"][p.name]
        if refresh:
            h *= b2
            h += (1.0 - b2) * (g * g)
        step = np.clip(m / np.maximum(h, hyper.eps), -hyper.rho, hyper.rho)
        p.value -= (hyper.lr * (step + hyper.weight_decay * p.value)).astype(
            p.value.dtype, copy=False)


def optimizer_step(kind, params, grads, state, hyper: OptimHyper = None):
    """One update of every param; validates gradients first.

    Args:
        kind: "adamw" or "sophia"; overrides hyper.kind.
        params: list of Param (mutated in place).
        grads: dict name -> gradient array; missing names count as zero.
        state: dict from init_state (mutated in place).
        hyper: hyperparameters; defaults per kind if omitted.

    Returns:
        (params, state), the same objects after the update.

    Raises:
        OptimDiverged on any non-finite gradient, before touching state.
    """
    if hyper is None:
        hyper = OptimHyper(kind=kind)
    check_finite(params, grads)
    if kind == "adamw":
        adamw_step(params, grads, state, hyper)
    elif kind == "sophia":
        sophia_step(params, grads, state, hyper)
    else:
        raise ValueError(f"unknown optimizer kind {kind!r}")
    return params, state
