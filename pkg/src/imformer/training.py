"""Dataset assembly and the patch-interleaved training loop.

The loop follows the noise-level-normalized scheme: every (noisy,
clean) pair is divided by sigma * g so the network always sees noise
with standard deviation 1, whatever the acquisition scale. Noise is
redrawn fresh each step (augmentation) unless the ablation flag
freezes the pairs; the g-factor flag swaps real maps for flat ones.
Patch size alternates with global step parity. The model with the
lowest validation loss wins.
"""

import math
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import Tape, backward
from .losses import LossWeights, composite_loss
from .models import ModelConfig, build_model
from .noise import (ComplexImage, GFactorMap, KspaceFilter, NoiseSpec,
                    corrupt, derive_seed, synth_gfactor)
from .optim import OptimDiverged, OptimHyper, init_state, optimizer_step
from .phantom import PhantomSpec, gen_phantom

TrainSample = namedtuple("TrainSample", "image g")
PatchDraw = namedtuple("PatchDraw", "image g row col")

# every consumer of the run seed draws from its own lane so adding a
# consumer never shifts another's stream
(_LANE_PHANTOM, _LANE_GMAP, _LANE_SPLIT, _LANE_VAL, _LANE_NOISE,
 _LANE_PATCH, _LANE_BATCH, _LANE_FROZEN) = range(8)


def _int_seed(global_seed, *index):
    return int(derive_seed(global_seed, *index).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    patch_sizes: tuple = (32, 64)
    # 2 keeps a 64^2 training step under 2 GB; larger batches gain
    # nothing per sample on one core
    batch_size: int = 2
    optimizer: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.0
    val_fraction: float = 0.10
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    noise_sigma: tuple = (2.0, 6.0)
    acceleration: int = 3
    partial_fourier: float = 0.75
    filter_strength: float = 0.5
    noise_augmentation: bool = True
    gfactor_augmentation: bool = True
    # psnr-term reference level; 1.0 is the noise std in these units
    loss_max_I: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        sizes = tuple(int(p) for p in self.patch_sizes)
        if not sizes or any(p < 8 for p in sizes):
            raise ValueError(f"patch sizes must all be >= 8, got {sizes}")
        object.__setattr__(self, "patch_sizes", sizes)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adamw", "sophia"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(
                f"val_fraction must be in (0, 1), got {self.val_fraction}")
        lo, hi = self.noise_sigma
        if lo < 0 or hi < lo:
            raise ValueError(f"bad sigma range {self.noise_sigma}")

    def noise_spec(self, seed):
        filt = KspaceFilter(strength=(self.filter_strength, self.filter_strength))
        return NoiseSpec(acceleration=self.acceleration, kspace_filter=filt,
                         partial_fourier_fraction=self.partial_fourier,
                         noise_sigma=self.noise_sigma, seed=seed)


def make_dataset(n, spec: PhantomSpec = PhantomSpec(), seed=0,
                 acceleration=3, roughness=0.5, n_workers=1):
    """n (clean phantom, g-factor map) pairs.

    Every sample is derived from (seed, index) alone, so the result is
    independent of worker count or build order.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")

    def build(i):
        pspec = replace(spec, seed=_int_seed(seed, _LANE_PHANTOM, i))
        img = gen_phantom(pspec)
        g = synth_gfactor(spec.height, spec.width, acceleration,
                          roughness=roughness,
                          seed=_int_seed(seed, _LANE_GMAP, i))
        return TrainSample(img, g)

    if n_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(build, range(n)))
    return [build(i) for i in range(n)]


def sample_patches(img: ComplexImage, g: GFactorMap, patch_size, n, seed):
    """n aligned (image, g) crops with their offsets.

    Crops keep all frames and take patch_size x patch_size spatially,
    positions uniform over the valid range. Offsets are recorded so
    callers can audit alignment or crop further arrays consistently.
    """
    t, h, w = img.data.shape
    p = int(patch_size)
    if p > h or p > w:
        raise ValueError(f"patch {p} exceeds image dims {(h, w)}")
    if (g.height, g.width) != (h, w):
        raise ValueError(f"g map {g.values.shape} does not match image {(h, w)}")
    rng = np.random.default_rng(derive_seed(seed, p, n))
    draws = []
    for _ in range(n):
        r = int(rng.integers(0, h - p + 1))
        c = int(rng.integers(0, w - p + 1))
        patch = ComplexImage(img.data[:, r:r + p, c:c + p].copy(),
                             img.pixel_intensity_scale, img.snr_unit)
        gp = GFactorMap(g.values[r:r + p, c:c + p].copy(), g.acceleration)
        draws.append(PatchDraw(patch, gp, r, c))
    return draws


def _flat_g(g: GFactorMap):
    return GFactorMap(np.ones_like(g.values), g.acceleration)


def to_snr_pair(noisy_data, clean_data, g: GFactorMap, sigma, dtype=np.float32):
    """(input stack, target) in SNR units.

    Dividing by sigma * g puts the corrupted image's noise at std 1
    everywhere; the clean target gets the same divisor so the learned
    mapping is scale-free. Input channels are [real, imag, g].
    """
    denom = sigma * g.values[None, :, :]
    xin = noisy_data / denom
    tgt = clean_data / denom
    gch = np.broadcast_to(g.values[None, :, :], noisy_data.shape)
    x = np.stack([xin.real, xin.imag, gch], axis=1).astype(dtype)
    y = np.stack([tgt.real, tgt.imag], axis=1).astype(dtype)
    return x, y


def _corrupt_sample(sample: TrainSample, cfg: TrainConfig, *lanes):
    g_eff = sample.g if cfg.gfactor_augmentation else _flat_g(sample.g)
    spec = cfg.noise_spec(_int_seed(cfg.seed, *lanes))
    noisy, sigma = corrupt(sample.image, g_eff, spec)
    return noisy, sigma, g_eff


def _batch_arrays(entries, patch_size, cfg, epoch, step):
    """Crop one aligned patch per (sample, noisy) entry and stack."""
    xs, ys = [], []
    for j, (sample, noisy, sigma, g_eff) in enumerate(entries):
        draw = sample_patches(noisy, g_eff, patch_size, 1,
                              _int_seed(cfg.seed, _LANE_PATCH, epoch, step, j))[0]
        r, c, p = draw.row, draw.col, patch_size
        clean_patch = sample.image.data[:, r:r + p, c:c + p]
        x, y = to_snr_pair(draw.image.data, clean_patch, draw.g, sigma)
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)


def _loss_value(model, x, y, cfg):
    tape = Tape()
    out = model.forward(tape, tape.leaf(x))
    loss = composite_loss(out, y, weights=cfg.loss_weights, max_I=cfg.loss_max_I)
    return loss, tape


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset):
    """Run the loop; return (best model, per-epoch history).

    history keys: train_loss and val_loss (one float per epoch),
    best_epoch, and diverged. On a non-finite loss or gradient the
    loop stops and the best parameters seen so far are kept.
    """
    cfg = train_cfg
    if not dataset:
        raise ValueError("dataset is empty")
    h0 = dataset[0].image.height
    w0 = dataset[0].image.width
    if max(cfg.patch_sizes) > min(h0, w0):
        raise ValueError(
            f"patch sizes {cfg.patch_sizes} exceed image dims {(h0, w0)}")

    model = build_model(model_cfg, seed=cfg.seed, dtype=np.float32)
    params = model.params()
    state = init_state(params)
    hyper = OptimHyper(kind=cfg.optimizer, lr=cfg.lr,
                       weight_decay=cfg.weight_decay)

    n = len(dataset)
    order = np.random.default_rng(
        derive_seed(cfg.seed, _LANE_SPLIT)).permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    if n_val >= n:
        raise ValueError(f"validation split takes all {n} samples")
    val_samples = [dataset[int(i)] for i in order[:n_val]]
    train_samples = [dataset[int(i)] for i in order[n_val:]]

    # the validation set is corrupted once and reused every epoch so
    # val losses are comparable across epochs
    val_set = []
    for i, s in enumerate(val_samples):
        noisy, sigma, g_eff = _corrupt_sample(s, cfg, _LANE_VAL, i)
        val_set.append((s, noisy, sigma, g_eff))

    frozen = None
    if not cfg.noise_augmentation:
        frozen = [_corrupt_sample(s, cfg, _LANE_FROZEN, i)
                  for i, s in enumerate(train_samples)]

    history = {"train_loss": [], "val_loss": [], "best_epoch": -1,
               "diverged": False}
    best_val = math.inf
    best_params = {p.name: p.value.copy() for p in params}
    n_train = len(train_samples)
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    global_step = 0
    stop = False

    for epoch in range(cfg.epochs):
        epoch_order = np.random.default_rng(
            derive_seed(cfg.seed, _LANE_BATCH, epoch)).permutation(n_train)
        step_losses = []
        for step in range(steps_per_epoch):
            idx = epoch_order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            p = cfg.patch_sizes[global_step % len(cfg.patch_sizes)]
            entries = []
            for i in idx:
                s = train_samples[int(i)]
                if frozen is not None:
                    noisy, sigma, g_eff = frozen[int(i)]
                else:
                    noisy, sigma, g_eff = _corrupt_sample(
                        s, cfg, _LANE_NOISE, epoch, step, int(i))
                entries.append((s, noisy, sigma, g_eff))
            x, y = _batch_arrays(entries, p, cfg, epoch, step)
            loss, tape = _loss_value(model, x, y, cfg)
            loss_v = float(loss.data)
            if not math.isfinite(loss_v):
                tape.release()
                history["diverged"] = True
                stop = True
                break
            grads = backward(loss)
            gd = {prm.name: grads.of(prm.on(tape)) for prm in params}
            # tapes are cyclic; reclaim now instead of waiting on gc
            tape.release()
            try:
                optimizer_step(cfg.optimizer, params, gd, state, hyper)
            except OptimDiverged:
                history["diverged"] = True
                stop = True
                break
            step_losses.append(loss_v)
            global_step += 1
        if step_losses:
            history["train_loss"].append(float(np.mean(step_losses)))
        if stop:
            break

        batches = math.ceil(len(val_set) / cfg.batch_size)
        val_losses = []
        for b in range(batches):
            chunk = val_set[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            xs, ys = [], []
            for s, noisy, sigma, g_eff in chunk:
                xv, yv = to_snr_pair(noisy.data, s.image.data, g_eff, sigma)
                xs.append(xv)
                ys.append(yv)
            loss, tape = _loss_value(model, np.stack(xs), np.stack(ys), cfg)
            val_losses.append(float(loss.data) * len(chunk))
            tape.release()
        val_loss = float(sum(val_losses) / len(val_set))
        history["val_loss"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = {p.name: p.value.copy() for p in params}
            history["best_epoch"] = epoch

    for p in params:
        p.value = best_params[p.name].copy()
    return model, history
