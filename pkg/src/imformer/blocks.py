"""Imaging-transformer block grammar.

Five module kinds compose into blocks from configuration strings like
"TLG" or "C3C3C3": temporal attention (T) across frames at a fixed
spatial position, local window attention (L) within non-overlapping
w x w spatial windows, global strided-grid attention (G) whose groups
are the spatial residue classes modulo a stride s (s = 1 collapses to
full-frame attention), and 2D/3D convolution modules (C2, C3).

All three attention kinds share one core (_attend) so that whenever
two groupings enumerate the same tokens in the same order, for example
L with a frame-sized window and G with stride 1, their outputs are
bit-identical, not merely close.

Data is carried as [T, C, H, W]; an optional leading batch axis is
accepted everywhere and handled in one pass. 2D inputs set T = 1 and
3D volumes map the slice dimension to T.
"""

from __future__ import annotations

import math

import numpy as np

from .engine import Param, Tensor

__all__ = [
    "BlockParseError",
    "BlockConfig",
    "parse_block_config",
    "format_block_config",
    "AttentionParams",
    "ConvParams",
    "temporal_attention",
    "local_attention",
    "global_attention",
    "conv_module",
    "run_block",
    "Block",
]

MODULE_KINDS = ("T", "L", "G", "C2", "C3")


class BlockParseError(ValueError):
    """Unknown symbol in a block configuration string."""

    def __init__(self, message, position):
        super().__init__(message)
        self.position = position


class BlockConfig:
    """Ordered module list over {T, L, G, C2, C3}."""

    def __init__(self, modules):
        modules = tuple(modules)
        if not modules:
            raise ValueError("block config must not be empty")
        for m in modules:
            if m not in MODULE_KINDS:
                raise ValueError(f"unknown module kind {m!r}")
        self.modules = modules

    def __iter__(self):
        return iter(self.modules)

    def __len__(self):
        return len(self.modules)

    def __eq__(self, other):
        return isinstance(other, BlockConfig) and self.modules == other.modules

    def __repr__(self):
        return f"BlockConfig({format_block_config(self)!r})"


def parse_block_config(s: str) -> BlockConfig:
    """Parse "TLG", "C3C3C3", ... into a BlockConfig.

    Raises:
        BlockParseError: unknown symbol, reported with its index.
    """
    modules = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch in ("T", "L", "G"):
            modules.append(ch)
            i += 1
        elif ch == "C":
            if i + 1 < len(s) and s[i + 1] in ("2", "3"):
                modules.append(s[i:i + 2])
                i += 2
            else:
                raise BlockParseError(
                    f"expected 2 or 3 after C at index {i} in {s!r}", i)
        else:
            raise BlockParseError(f"unknown symbol {ch!r} at index {i} in {s!r}", i)
    if not modules:
        raise BlockParseError(f"empty block config {s!r}", 0)
    return BlockConfig(modules)


def format_block_config(cfg: BlockConfig) -> str:
    return "".join(cfg.modules)


# ---------------------------------------------------------------
# parameters
# ---------------------------------------------------------------

class AttentionParams:
    """Weights for one attention module (any of T, L, G).

    Pre-norm transformer sub-block: two layernorms with affine
    parameters, q/k/v/o projections with biases, token-wise MLP with
    expansion 2. relative_bias adds a learned table of relative
    positional scores; it is consumed by local_attention only.
    """

    def __init__(self, channels, heads=4, window=8, stride=8,
                 relative_bias=False, dtype=np.float64, rng=None, name="attn"):
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        if window < 1 or stride < 1:
            raise ValueError("window and stride must be >= 1")
        self.channels = int(channels)
        self.heads = int(heads)
        self.window = int(window)
        self.stride = int(stride)
        self.relative_bias = bool(relative_bias)
        self.eps = 1e-5
        rng = rng or np.random.default_rng(0)
        c = self.channels

        def w(shape, fan_in):
            return Param((rng.standard_normal(shape) / math.sqrt(fan_in)).astype(dtype))

        def zeros(*shape):
            return Param(np.zeros(shape, dtype=dtype))

        def ones(*shape):
            return Param(np.ones(shape, dtype=dtype))

        self.ln1_g, self.ln1_b = ones(c), zeros(c)
        self.wq, self.bq = w((c, c), c), zeros(c)
        self.wk, self.bk = w((c, c), c), zeros(c)
        self.wv, self.bv = w((c, c), c), zeros(c)
        self.wo, self.bo = w((c, c), c), zeros(c)
        self.ln2_g, self.ln2_b = ones(c), zeros(c)
        self.mlp_w1, self.mlp_b1 = w((c, 2 * c), c), zeros(2 * c)
        self.mlp_w2, self.mlp_b2 = w((2 * c, c), 2 * c), zeros(c)
        if self.relative_bias:
            side = 2 * self.window - 1
            self.bias_table = zeros(side * side, self.heads)
        for field, p in vars(self).items():
            if isinstance(p, Param):
                p.name = f"{name}.{field}"

    def params(self):
        return [p for p in vars(self).values() if isinstance(p, Param)]


class ConvParams:
    """Weights for a C2 or C3 module: conv -> activation -> norm.

    bypass_activation / bypass_norm exist for test mode, where the
    conv kernel alone must be observable.
    """

    def __init__(self, channels, kind, dtype=np.float64, rng=None, name="conv",
                 bypass_activation=False, bypass_norm=False):
        if kind not in ("C2", "C3"):
            raise ValueError(f"conv module kind must be C2 or C3, got {kind!r}")
        self.channels = int(channels)
        self.kind = kind
        self.eps = 1e-5
        self.bypass_activation = bool(bypass_activation)
        self.bypass_norm = bool(bypass_norm)
        rng = rng or np.random.default_rng(0)
        c = self.channels
        kshape = (c, c, 3, 3) if kind == "C2" else (c, c, 3, 3, 3)
        fan_in = c * (9 if kind == "C2" else 27)
        self.weight = Param((rng.standard_normal(kshape) / math.sqrt(fan_in)).astype(dtype),
                            name=f"{name}.weight")
        self.bias = Param(np.zeros(c, dtype=dtype), name=f"{name}.bias")
        self.ln_g = Param(np.ones(c, dtype=dtype), name=f"{name}.ln_g")
        self.ln_b = Param(np.zeros(c, dtype=dtype), name=f"{name}.ln_b")

    def params(self):
        return [self.weight, self.bias, self.ln_g, self.ln_b]


# ---------------------------------------------------------------
# shared attention core
# ---------------------------------------------------------------

def _as5d(x):
    if x.ndim == 5:
        return x, False
    if x.ndim == 4:
        t, c, h, w = x.shape
        return x.reshape(1, t, c, h, w), True
    raise ValueError(f"expected (T,C,H,W) or (B,T,C,H,W), got {x.shape}")


def _restore(x5, squeezed):
    if squeezed:
        b, t, c, h, w = x5.shape
        return x5.reshape(t, c, h, w)
    return x5


def _attend(tape, tokens, p: AttentionParams, bias=None):
    """Pre-norm attention + MLP over token groups.

    tokens: (G, N, C) - G independent groups of N tokens each.
    bias: optional (heads, N, N) additive attention scores.
    """
    g, n, c = tokens.shape
    nh, dh = p.heads, c // p.heads
    xn = tape.record("layernorm", tokens, eps=p.eps) * p.ln1_g.on(tape) + p.ln1_b.on(tape)
    flat = xn.reshape(g * n, c)

    def heads(w, b):
        y = flat @ w.on(tape) + b.on(tape)
        return y.reshape(g, n, nh, dh).transpose(0, 2, 1, 3)

    # scale q, not the (N,N) score map: same math, far smaller node
    q = heads(p.wq, p.bq) * (1.0 / math.sqrt(dh))
    k = heads(p.wk, p.bk)
    v = heads(p.wv, p.bv)
    raw = scores = q @ k.transpose(0, 1, 3, 2)
    if bias is not None:
        scores = scores + bias
    att = tape.record("softmax", scores, axis=-1)
    # score maps dominate tape memory and nothing reads them after the
    # softmax (its vjp runs off ctx, add/matmul vjps off their inputs)
    tape.drop(scores)
    if raw is not scores:
        tape.drop(raw)
    out = (att @ v).transpose(0, 2, 1, 3).reshape(g * n, c)
    out = (out @ p.wo.on(tape) + p.bo.on(tape)).reshape(g, n, c)

    y = tokens + out
    yn = tape.record("layernorm", y, eps=p.eps) * p.ln2_g.on(tape) + p.ln2_b.on(tape)
    h = (yn.reshape(g * n, c) @ p.mlp_w1.on(tape) + p.mlp_b1.on(tape)).gelu()
    h = (h @ p.mlp_w2.on(tape) + p.mlp_b2.on(tape)).reshape(g, n, c)
    return y + h


def _pad_spatial(tape, x5, mult_h, mult_w):
    """Reflect-pad H and W up to the given multiples."""
    b, t, c, h, w = x5.shape
    ph = (-h) % mult_h
    pw = (-w) % mult_w
    if ph == 0 and pw == 0:
        return x5, h, w
    pad = ((0, 0), (0, 0), (0, 0), (0, ph), (0, pw))
    return tape.record("pad", x5, pad=pad, mode="reflect"), h, w


def _crop_spatial(x5, h, w):
    if x5.shape[3] == h and x5.shape[4] == w:
        return x5
    return x5[:, :, :, 0:h, 0:w]


def _relative_bias(tape, p, w_eff, n):
    """(heads, N, N) additive scores from the learned table.

    Indexing is realized as a constant one-hot matmul so the lookup
    stays differentiable w.r.t. the table with tape primitives only.
    """
    side = 2 * p.window - 1
    ij = np.arange(w_eff)
    dy = (ij[:, None] - ij[None, :]).reshape(w_eff, w_eff, 1, 1)
    dx = (ij[:, None] - ij[None, :]).reshape(1, 1, w_eff, w_eff)
    idx = ((dy + p.window - 1) * side + (dx + p.window - 1))
    idx = idx.transpose(0, 2, 1, 3).reshape(n * n)
    onehot = np.zeros((n * n, side * side))
    onehot[np.arange(n * n), idx] = 1.0
    table = p.bias_table.on(tape)
    onehot = onehot.astype(table.dtype)
    bias = tape.record("matmul", tape.const(onehot), table)
    return bias.reshape(n, n, p.heads).transpose(2, 0, 1)


def temporal_attention(tape, x, p: AttentionParams):
    """Attention across the T frames at every spatial position."""
    x5, squeezed = _as5d(x)
    b, t, c, h, w = x5.shape
    tokens = x5.transpose(0, 3, 4, 1, 2).reshape(b * h * w, t, c)
    y = _attend(tape, tokens, p)
    y = y.reshape(b, h, w, t, c).transpose(0, 3, 4, 1, 2)
    return _restore(y, squeezed)


def local_attention(tape, x, p: AttentionParams):
    """Attention within non-overlapping w x w spatial windows, per frame."""
    x5, squeezed = _as5d(x)
    w_eff = min(p.window, x5.shape[3], x5.shape[4])
    x5p, h0, w0 = _pad_spatial(tape, x5, w_eff, w_eff)
    b, t, c, h, w = x5p.shape
    nh, nw = h // w_eff, w // w_eff
    xt = x5p.transpose(0, 1, 3, 4, 2)
    win = xt.reshape(b, t, nh, w_eff, nw, w_eff, c)
    win = win.transpose(0, 1, 2, 4, 3, 5, 6).reshape(b * t * nh * nw, w_eff * w_eff, c)
    bias = None
    if p.relative_bias:
        bias = _relative_bias(tape, p, w_eff, w_eff * w_eff)
    y = _attend(tape, win, p, bias=bias)
    y = y.reshape(b, t, nh, nw, w_eff, w_eff, c).transpose(0, 1, 2, 4, 3, 5, 6)
    y = y.reshape(b, t, h, w, c).transpose(0, 1, 4, 2, 3)
    return _restore(_crop_spatial(y, h0, w0), squeezed)


def global_attention(tape, x, p: AttentionParams):
    """Strided grid attention: groups are residue classes modulo s.

    Token (i, j) attends to every token at (i + a*s, j + b*s), so each
    group spans the whole frame; s = 1 degenerates to full-frame
    attention over all H*W tokens.
    """
    x5, squeezed = _as5d(x)
    s_eff = min(p.stride, x5.shape[3], x5.shape[4])
    x5p, h0, w0 = _pad_spatial(tape, x5, s_eff, s_eff)
    b, t, c, h, w = x5p.shape
    gh, gw = h // s_eff, w // s_eff
    xt = x5p.transpose(0, 1, 3, 4, 2)
    grid = xt.reshape(b, t, gh, s_eff, gw, s_eff, c)
    perm = (0, 1, 3, 5, 2, 4, 6)
    grid = grid.transpose(*perm).reshape(b * t * s_eff * s_eff, gh * gw, c)
    y = _attend(tape, grid, p)
    y = y.reshape(b, t, s_eff, s_eff, gh, gw, c).transpose(*np.argsort(perm))
    y = y.reshape(b, t, h, w, c).transpose(0, 1, 4, 2, 3)
    return _restore(_crop_spatial(y, h0, w0), squeezed)


def conv_module(tape, x, p: ConvParams):
    """conv -> activation -> channel layernorm, shape preserving.

    C2 convolves each frame independently; C3 convolves over
    (T, H, W) with "same" zero padding, so a T=1 input sees only the
    center depth slice of the kernel.
    """
    x5, squeezed = _as5d(x)
    b, t, c, h, w = x5.shape
    if p.kind == "C2":
        y = tape.record("conv2d", x5.reshape(b * t, c, h, w),
                        p.weight.on(tape), p.bias.on(tape))
        y = y.reshape(b, t, c, h, w)
    else:
        y = tape.record("conv3d", x5.transpose(0, 2, 1, 3, 4),
                        p.weight.on(tape), p.bias.on(tape))
        y = y.transpose(0, 2, 1, 3, 4)
    if not p.bypass_activation:
        y = y.gelu()
    if not p.bypass_norm:
        yt = y.transpose(0, 1, 3, 4, 2)
        yt = tape.record("layernorm", yt, eps=p.eps) * p.ln_g.on(tape) + p.ln_b.on(tape)
        y = yt.transpose(0, 1, 4, 2, 3)
    return _restore(y, squeezed)


_FORWARD = {
    "T": temporal_attention,
    "L": local_attention,
    "G": global_attention,
    "C2": conv_module,
    "C3": conv_module,
}


def run_block(tape, x, cfg: BlockConfig, params):
    """Apply the configured modules in order; each preserves shape.

    params is one parameter object per module: AttentionParams for
    T/L/G, ConvParams (of the matching kind) for C2/C3.
    """
    if len(params) != len(cfg):
        raise ValueError(f"{len(cfg)} modules but {len(params)} param sets")
    y = x
    for kind, p in zip(cfg, params):
        if kind in ("T", "L", "G"):
            if not isinstance(p, AttentionParams):
                raise TypeError(f"module {kind} needs AttentionParams")
        else:
            if not isinstance(p, ConvParams) or p.kind != kind:
                raise TypeError(f"module {kind} needs ConvParams of kind {kind}")
        y = _FORWARD[kind](tape, y, p)
    return y


class Block:
    """A parsed block config bundled with per-module parameters."""

    def __init__(self, cfg, channels, heads=4, window=8, stride=8,
                 relative_bias=False, dtype=np.float64, rng=None, name="block"):
        if isinstance(cfg, str):
            cfg = parse_block_config(cfg)
        self.cfg = cfg
        self.channels = channels
        rng = rng or np.random.default_rng(0)
        self.module_params = []
        for i, kind in enumerate(cfg):
            mname = f"{name}.{i}{kind}"
            if kind in ("T", "L", "G"):
                # the bias table is only consumed by L; building it
                # elsewhere would leave dead parameters
                p = AttentionParams(channels, heads=heads, window=window,
                                    stride=stride,
                                    relative_bias=relative_bias and kind == "L",
                                    dtype=dtype, rng=rng, name=mname)
            else:
                p = ConvParams(channels, kind, dtype=dtype, rng=rng, name=mname)
            self.module_params.append(p)

    def __call__(self, tape, x):
        return run_block(tape, x, self.cfg, self.module_params)

    def params(self):
        out = []
        for p in self.module_params:
            out.extend(p.params())
        return out
