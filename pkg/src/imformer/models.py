"""Unet and HRnet trunks assembled from imformer blocks.

Both models map (T, 3, H, W) inputs (real, imaginary, g-factor map)
to (T, 2, H, W) outputs and end in a zero-initialized head conv plus
a long-term skip that adds the input complex channels back, so an
untrained model is exactly the identity denoiser. A leading batch
axis is accepted everywhere.

Topologies, with C = base_channels and one block config per level:

  unet   stem 3x3 (in -> C)
         level l encoder block at C*2^l, strided 3x3 conv down between
         levels; decoder per level: nearest 2x upsample + 3x3 conv,
         concat encoder features, 3x3 fuse conv, decoder block;
         head 3x3 (C -> out, zero init)

  hrnet  stem 3x3 (in -> C), strided 3x3 conv to a half-res stream
         at 2C; two stages, each running one block per stream and
         then exchanging streams (factor-2 bilinear resize, 1x1 conv,
         add); final exchange into the full-res stream; head as above

The fusion_enabled flag only gates the forward pass. The parameter
set never depends on it, so ablations compare like with like.
"""

import math
from dataclasses import dataclass

import numpy as np

from .blocks import Block, parse_block_config
from .engine import Param, ShapeMismatchError, Tape

__all__ = [
    "ModelConfig",
    "Model",
    "UnetModel",
    "HRnetModel",
    "build_model",
    "forward_unet",
    "forward_hrnet",
    "count_parameters",
]

_KINDS = ("unet", "hrnet")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "unet"
    block_cfg: tuple = ("TLG", "TLG")
    base_channels: int = 16
    levels: int = 0  # 0 means: one level per block_cfg entry
    in_channels: int = 3
    out_channels: int = 2
    heads: int = 4
    window: int = 8
    stride: int = 8
    relative_bias: bool = False
    fusion_enabled: bool = True

    def __post_init__(self):
        if isinstance(self.block_cfg, str):
            object.__setattr__(self, "block_cfg",
                               tuple(self.block_cfg.split(",")))
        else:
            object.__setattr__(self, "block_cfg", tuple(self.block_cfg))
        if self.levels == 0:
            object.__setattr__(self, "levels", len(self.block_cfg))
        if self.kind not in _KINDS:
            raise ValueError(f"model kind must be one of {_KINDS}, got {self.kind!r}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.block_cfg) != self.levels:
            raise ValueError(f"{self.levels} levels need {self.levels} block "
                             f"configs, got {len(self.block_cfg)}")
        if self.kind == "hrnet" and self.levels != 2:
            raise ValueError("hrnet runs exactly two resolution streams")
        if self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.out_channels > self.in_channels:
            raise ValueError("long-term skip needs out_channels <= in_channels")
        for cfg in self.block_cfg:
            parse_block_config(cfg)  # fail early, with position info

    def level_channels(self, level):
        return self.base_channels * (2 ** level)

    def to_text(self):
        """Flat key=value form, one pair per line; round-trips via from_text."""
        pairs = [
            ("kind", self.kind),
            ("block_cfg", ",".join(self.block_cfg)),
            ("base_channels", self.base_channels),
            ("levels", self.levels),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("heads", self.heads),
            ("window", self.window),
            ("stride", self.stride),
            ("relative_bias", int(self.relative_bias)),
            ("fusion_enabled", int(self.fusion_enabled)),
        ]
        return "".join(f"{k}={v}\n" for k, v in pairs)

    @classmethod
    def from_text(cls, text):
        ints = {"base_channels", "levels", "in_channels", "out_channels",
                "heads", "window", "stride"}
        bools = {"relative_bias", "fusion_enabled"}
        kw = {}
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {ln}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key in ints:
                kw[key] = int(val)
            elif key in bools:
                kw[key] = bool(int(val))
            elif key in ("kind", "block_cfg"):
                kw[key] = val
            else:
                raise ValueError(f"line {ln}: unknown config key {key!r}")
        return cls(**kw)


class FrameConv:
    """Plain per-frame conv weights; k=1 gives the fusion projections."""

    def __init__(self, cin, cout, rng, name, k=3, zero=False, dtype=np.float64):
        if zero:
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            w = (rng.standard_normal((cout, cin, k, k))
                 / math.sqrt(cin * k * k)).astype(dtype)
        self.weight = Param(w, name=f"{name}.weight")
        self.bias = Param(np.zeros(cout, dtype=dtype), name=f"{name}.bias")

    def params(self):
        return [self.weight, self.bias]


def _as5d(x):
    if x.ndim == 5:
        return x, False
    if x.ndim == 4:
        t, c, h, w = x.shape
        return x.reshape(1, t, c, h, w), True
    raise ShapeMismatchError(f"expected (T,C,H,W) or (B,T,C,H,W), got {x.shape}")


def _conv_frames(tape, x5, fc, stride=1):
    b, t, c, h, w = x5.shape
    y = tape.record("conv2d", x5.reshape(b * t, c, h, w),
                    fc.weight.on(tape), fc.bias.on(tape), stride=stride)
    _, co, ho, wo = y.shape
    return y.reshape(b, t, co, ho, wo)


_SMOOTH_2X = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


def _upsample_bilinear(tape, x5):
    """Factor-2 bilinear upsample with clamped edges.

    Nearest doubling followed by a fixed [1 2 1]/4 smoothing per axis
    is algebraically the same interpolation; reflect padding reproduces
    the edge clamp because doubling makes the two border rows equal.
    """
    b, t, c, h, w = x5.shape
    y = tape.record("upsample2x", x5).reshape(b * t, c, 2 * h, 2 * w)
    y = tape.record("pad", y, pad=((0, 0), (0, 0), (1, 1), (1, 1)),
                    mode="reflect")
    k = np.zeros((c, c, 3, 3), dtype=x5.dtype)
    for i in range(c):
        k[i, i] = _SMOOTH_2X
    y = tape.record("conv2d", y, k, pad=0)
    return y.reshape(b, t, c, 2 * h, 2 * w)


def _pad_to_multiple(tape, x5, m):
    b, t, c, h, w = x5.shape
    ph, pw = -h % m, -w % m
    if ph == 0 and pw == 0:
        return x5
    return tape.record("pad", x5,
                       pad=((0, 0), (0, 0), (0, 0), (0, ph), (0, pw)),
                       mode="reflect")


class Model:
    """Common scaffolding: config, parameter listing, ndarray call."""

    def __init__(self, config: ModelConfig, seed=0, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        self._rng = np.random.default_rng(seed)
        self._parts = []

    def _block(self, cfg_string, channels, name):
        blk = Block(cfg_string, channels,
                    heads=self.config.heads, window=self.config.window,
                    stride=self.config.stride,
                    relative_bias=self.config.relative_bias,
                    dtype=self.dtype, rng=self._rng, name=name)
        self._parts.append(blk)
        return blk

    def _conv(self, cin, cout, name, k=3, zero=False):
        fc = FrameConv(cin, cout, self._rng, name, k=k, zero=zero,
                       dtype=self.dtype)
        self._parts.append(fc)
        return fc

    def params(self):
        out = []
        for part in self._parts:
            out.extend(part.params())
        return out

    def forward(self, tape, x):
        raise NotImplementedError

    def __call__(self, x):
        tape = Tape()
        out = self.forward(tape, tape.leaf(np.asarray(x))).data
        tape.release()
        return out

    def _check_input(self, x5):
        if x5.shape[2] != self.config.in_channels:
            raise ShapeMismatchError(
                f"expected {self.config.in_channels} input channels, "
                f"got {x5.shape[2]}")

    def _finish(self, y, x5, h, w):
        """Crop padding, then add the long-term skip."""
        y = y[:, :, :, :h, :w]
        return y + x5[:, :, : self.config.out_channels]


class UnetModel(Model):
    def __init__(self, config, seed=0, dtype=np.float64):
        super().__init__(config, seed, dtype)
        cfg = config
        C = cfg.base_channels
        self.stem = self._conv(cfg.in_channels, C, "stem")
        self.enc, self.down, self.up, self.fuse, self.dec = [], [], [], [], []
        for l in range(cfg.levels):
            cl = cfg.level_channels(l)
            self.enc.append(self._block(cfg.block_cfg[l], cl, f"enc{l}"))
            if l < cfg.levels - 1:
                self.down.append(self._conv(cl, 2 * cl, f"down{l}"))
        for l in range(cfg.levels - 1):
            cl = cfg.level_channels(l)
            self.up.append(self._conv(2 * cl, cl, f"up{l}"))
            self.fuse.append(self._conv(2 * cl, cl, f"fuse{l}"))
            self.dec.append(self._block(cfg.block_cfg[l], cl, f"dec{l}"))
        self.head = self._conv(C, cfg.out_channels, "head", zero=True)

    def forward(self, tape, x):
        x5, squeezed = _as5d(x)
        self._check_input(x5)
        b, t, c, h, w = x5.shape
        levels = self.config.levels
        xp = _pad_to_multiple(tape, x5, 2 ** (levels - 1))
        y = _conv_frames(tape, xp, self.stem)
        skips = []
        for l in range(levels):
            y = self.enc[l](tape, y)
            if l < levels - 1:
                skips.append(y)
                y = _conv_frames(tape, y, self.down[l], stride=2)
        for l in reversed(range(levels - 1)):
            y = tape.record("upsample2x", y)
            y = _conv_frames(tape, y, self.up[l])
            y = tape.record("concat", y, skips[l], axis=2)
            y = _conv_frames(tape, y, self.fuse[l])
            y = self.dec[l](tape, y)
        y = _conv_frames(tape, y, self.head)
        out = self._finish(y, x5, h, w)
        return out.reshape(t, self.config.out_channels, h, w) if squeezed else out


class HRnetModel(Model):
    STAGES = 2

    def __init__(self, config, seed=0, dtype=np.float64):
        super().__init__(config, seed, dtype)
        cfg = config
        C = cfg.base_channels
        self.stem = self._conv(cfg.in_channels, C, "stem")
        self.to_half = self._conv(C, 2 * C, "to_half")
        self.full_blocks, self.half_blocks = [], []
        self.fuse_up, self.fuse_down = [], []
        for s in range(self.STAGES):
            self.full_blocks.append(self._block(cfg.block_cfg[0], C, f"full{s}"))
            self.half_blocks.append(self._block(cfg.block_cfg[1], 2 * C, f"half{s}"))
            self.fuse_up.append(self._conv(2 * C, C, f"fuse_up{s}", k=1))
            self.fuse_down.append(self._conv(C, 2 * C, f"fuse_down{s}", k=1))
        self.final_fuse = self._conv(2 * C, C, "final_fuse", k=1)
        self.head = self._conv(C, cfg.out_channels, "head", zero=True)

    def forward(self, tape, x):
        x5, squeezed = _as5d(x)
        self._check_input(x5)
        b, t, c, h, w = x5.shape
        fusion = self.config.fusion_enabled
        xp = _pad_to_multiple(tape, x5, 2)
        full = _conv_frames(tape, xp, self.stem)
        half = _conv_frames(tape, full, self.to_half, stride=2)
        for s in range(self.STAGES):
            full = self.full_blocks[s](tape, full)
            half = self.half_blocks[s](tape, half)
            if fusion:
                up = _conv_frames(tape, _upsample_bilinear(tape, half),
                                  self.fuse_up[s])
                down = _conv_frames(tape, tape.record("downsample2x", full),
                                    self.fuse_down[s])
                full, half = full + up, half + down
        if fusion:
            full = full + _conv_frames(tape, _upsample_bilinear(tape, half),
                                       self.final_fuse)
        y = _conv_frames(tape, full, self.head)
        out = self._finish(y, x5, h, w)
        return out.reshape(t, self.config.out_channels, h, w) if squeezed else out


def build_model(cfg: ModelConfig, seed=0, dtype=np.float64):
    """Deterministic per (cfg, seed): same call, same initial weights."""
    if cfg.kind == "unet":
        return UnetModel(cfg, seed=seed, dtype=dtype)
    return HRnetModel(cfg, seed=seed, dtype=dtype)


def forward_unet(model, x):
    if model.config.kind != "unet":
        raise ValueError(f"model kind is {model.config.kind!r}, not unet")
    return model(x)


def forward_hrnet(model, x):
    if model.config.kind != "hrnet":
        raise ValueError(f"model kind is {model.config.kind!r}, not hrnet")
    return model(x)


def count_parameters(model) -> int:
    return int(sum(p.value.size for p in model.params()))
