"""Training pipeline: dataset assembly, patch sampling, and the loop."""

import numpy as np
import pytest

import imformer.training as training
from imformer.models import ModelConfig
from imformer.noise import ComplexImage, GFactorMap, synth_gfactor
from imformer.phantom import PhantomSpec
from imformer.training import (TrainConfig, make_dataset, sample_patches,
                               to_snr_pair, train)

SMALL_SPEC = PhantomSpec(height=32, width=32, frames=4)
SMALL_MODEL = ModelConfig(kind="unet", block_cfg=("TLG", "TLG"),
                          base_channels=8, heads=2, window=4, stride=4)


def small_cfg(**kw):
    base = dict(epochs=2, patch_sizes=(16, 32), batch_size=4, seed=3)
    base.update(kw)
    return TrainConfig(**base)


# -- dataset ------------------------------------------------------

def test_make_dataset_deterministic_and_worker_independent():
    a = make_dataset(6, SMALL_SPEC, seed=11)
    b = make_dataset(6, SMALL_SPEC, seed=11)
    c = make_dataset(6, SMALL_SPEC, seed=11, n_workers=3)
    for sa, sb, sc in zip(a, b, c):
        assert np.array_equal(sa.image.data, sb.image.data)
        assert np.array_equal(sa.image.data, sc.image.data)
        assert np.array_equal(sa.g.values, sb.g.values)
        assert np.array_equal(sa.g.values, sc.g.values)


def test_make_dataset_samples_differ_and_seeds_differ():
    ds = make_dataset(4, SMALL_SPEC, seed=0)
    assert not np.array_equal(ds[0].image.data, ds[1].image.data)
    other = make_dataset(4, SMALL_SPEC, seed=1)
    assert not np.array_equal(ds[0].image.data, other[0].image.data)


def test_make_dataset_rejects_empty():
    with pytest.raises(ValueError, match="n >= 1"):
        make_dataset(0, SMALL_SPEC)


# -- patch sampling -----------------------------------------------

def test_patch_alignment_audit():
    """Recorded offsets must reproduce every patch exactly."""
    rng = np.random.default_rng(7)
    t, h, w = 3, 24, 40
    data = (rng.normal(size=(t, h, w)) + 1j * rng.normal(size=(t, h, w)))
    img = ComplexImage(data, 100.0)
    g = GFactorMap(1.0 + rng.uniform(0, 2, size=(h, w)), 3)
    total = 0
    for p in (8, 16, 24):
        draws = sample_patches(img, g, p, 40, seed=p)
        for d in draws:
            assert 0 <= d.row <= h - p
            assert 0 <= d.col <= w - p
            assert d.image.data.shape == (t, p, p)
            assert np.array_equal(d.image.data,
                                  data[:, d.row:d.row + p, d.col:d.col + p])
            assert np.array_equal(d.g.values,
                                  g.values[d.row:d.row + p, d.col:d.col + p])
            total += 1
    assert total == 120


def test_patch_positions_cover_valid_range():
    rng = np.random.default_rng(0)
    h = w = 24
    img = ComplexImage(rng.normal(size=(1, h, w)) + 0j, 1.0)
    g = GFactorMap(np.ones((h, w)), 2)
    draws = sample_patches(img, g, 8, 10_000, seed=5)
    rows = np.array([d.row for d in draws])
    cols = np.array([d.col for d in draws])
    # uniform over [0, 16]: all positions hit with 10k draws
    assert set(rows.tolist()) == set(range(h - 8 + 1))
    assert set(cols.tolist()) == set(range(w - 8 + 1))


def test_patch_full_size_single_crop():
    rng = np.random.default_rng(1)
    img = ComplexImage(rng.normal(size=(2, 16, 16)) + 0j, 1.0)
    g = GFactorMap(np.ones((16, 16)), 2)
    for d in sample_patches(img, g, 16, 5, seed=0):
        assert (d.row, d.col) == (0, 0)
        assert np.array_equal(d.image.data, img.data)


def test_patch_deterministic_per_seed():
    rng = np.random.default_rng(2)
    img = ComplexImage(rng.normal(size=(1, 32, 32)) + 0j, 1.0)
    g = GFactorMap(np.ones((32, 32)), 2)
    a = sample_patches(img, g, 8, 6, seed=9)
    b = sample_patches(img, g, 8, 6, seed=9)
    assert [(d.row, d.col) for d in a] == [(d.row, d.col) for d in b]


def test_patch_too_large_rejected():
    img = ComplexImage(np.zeros((1, 16, 16), complex), 1.0)
    g = GFactorMap(np.ones((16, 16)), 2)
    with pytest.raises(ValueError, match="exceeds"):
        sample_patches(img, g, 17, 1, seed=0)


def test_patch_g_shape_mismatch_rejected():
    img = ComplexImage(np.zeros((1, 16, 16), complex), 1.0)
    g = GFactorMap(np.ones((8, 8)), 2)
    with pytest.raises(ValueError, match="match"):
        sample_patches(img, g, 8, 1, seed=0)


# -- SNR-unit pairs -----------------------------------------------

def test_to_snr_pair_channel_semantics():
    rng = np.random.default_rng(3)
    t, h, w = 2, 8, 8
    noisy = rng.normal(size=(t, h, w)) + 1j * rng.normal(size=(t, h, w))
    clean = rng.normal(size=(t, h, w)) + 1j * rng.normal(size=(t, h, w))
    gv = 1.0 + rng.uniform(0, 1, size=(h, w))
    g = GFactorMap(gv, 3)
    sigma = 2.5
    x, y = to_snr_pair(noisy, clean, g, sigma)
    assert x.shape == (t, 3, h, w) and y.shape == (t, 2, h, w)
    assert x.dtype == np.float32 and y.dtype == np.float32
    den = sigma * gv
    np.testing.assert_allclose(x[:, 0], (noisy.real / den), rtol=1e-6)
    np.testing.assert_allclose(x[:, 1], (noisy.imag / den), rtol=1e-6)
    np.testing.assert_allclose(x[:, 2], np.broadcast_to(gv, (t, h, w)),
                               rtol=1e-7)
    np.testing.assert_allclose(y[:, 0], (clean.real / den), rtol=1e-6)
    np.testing.assert_allclose(y[:, 1], (clean.imag / den), rtol=1e-6)


def test_to_snr_pair_unit_noise_std():
    """Pure noise scaled by sigma*g comes out at std 1 in the stack."""
    rng = np.random.default_rng(4)
    h = w = 64
    gv = 1.0 + rng.uniform(0, 2, size=(h, w))
    sigma = 3.0
    noise = sigma * gv * (rng.normal(size=(8, h, w))
                          + 1j * rng.normal(size=(8, h, w)))
    x, _ = to_snr_pair(noise, np.zeros_like(noise), GFactorMap(gv, 3), sigma)
    assert abs(x[:, 0].std() - 1.0) < 0.02
    assert abs(x[:, 1].std() - 1.0) < 0.02


# -- config validation --------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="patch"):
        TrainConfig(patch_sizes=(4,))
    with pytest.raises(ValueError, match="patch"):
        TrainConfig(patch_sizes=())
    with pytest.raises(ValueError, match="batch"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="optimizer"):
        TrainConfig(optimizer="sgd")
    with pytest.raises(ValueError, match="lr"):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError, match="val_fraction"):
        TrainConfig(val_fraction=1.0)
    with pytest.raises(ValueError, match="sigma"):
        TrainConfig(noise_sigma=(5.0, 1.0))


def test_train_config_coerces_patch_sizes_to_int():
    cfg = TrainConfig(patch_sizes=(16.0, 32.0))
    assert cfg.patch_sizes == (16, 32)
    assert all(isinstance(p, int) for p in cfg.patch_sizes)


# -- the loop -----------------------------------------------------

@pytest.fixture(scope="module")
def tiny_dataset():
    return make_dataset(10, SMALL_SPEC, seed=21)


def test_train_smoke_and_history_shape(tiny_dataset):
    model, hist = train(SMALL_MODEL, small_cfg(), tiny_dataset)
    assert len(hist["train_loss"]) == 2
    assert len(hist["val_loss"]) == 2
    assert all(np.isfinite(v) for v in hist["train_loss"])
    assert all(np.isfinite(v) for v in hist["val_loss"])
    assert not hist["diverged"]
    assert hist["best_epoch"] == int(np.argmin(hist["val_loss"]))
    for p in model.params():
        assert p.value.dtype == np.float32


def test_train_deterministic(tiny_dataset):
    _, h1 = train(SMALL_MODEL, small_cfg(), tiny_dataset)
    _, h2 = train(SMALL_MODEL, small_cfg(), tiny_dataset)
    assert h1 == h2


def test_train_returns_best_epoch_params(tiny_dataset):
    model, hist = train(SMALL_MODEL, small_cfg(), tiny_dataset)
    again, _ = train(SMALL_MODEL, small_cfg(), tiny_dataset)
    for p, q in zip(model.params(), again.params()):
        assert p.name == q.name
        assert np.array_equal(p.value, q.value)


def test_patch_size_follows_step_parity(tiny_dataset, monkeypatch):
    seen = []
    real = training.sample_patches

    def spy(img, g, patch_size, n, seed):
        seen.append(int(patch_size))
        return real(img, g, patch_size, n, seed)

    monkeypatch.setattr(training, "sample_patches", spy)
    cfg = small_cfg(epochs=1, batch_size=2)
    train(SMALL_MODEL, cfg, tiny_dataset)
    # 9 train samples, batch 2 -> 5 steps; one draw per sample
    per_step = [seen[i] for i in np.cumsum([0, 2, 2, 2, 2])]
    assert per_step == [16, 32, 16, 32, 16]
    # within a step every sample uses the same size
    k = 0
    for step, width in enumerate([2, 2, 2, 2, 1]):
        assert set(seen[k:k + width]) == {per_step[step]}
        k += width


def test_noise_augmentation_redraws_each_step(tiny_dataset, monkeypatch):
    calls = []
    real = training.corrupt

    def spy(image, g, spec):
        calls.append(spec.seed)
        return real(image, g, spec)

    monkeypatch.setattr(training, "corrupt", spy)
    cfg = small_cfg(epochs=2, batch_size=5)
    train(SMALL_MODEL, cfg, tiny_dataset)
    # 1 val sample corrupted once, then each of 9 train samples gets a
    # fresh corruption in every epoch it is visited
    assert len(calls) == 1 + 9 * 2
    # fresh seed every draw: nothing reused between steps or epochs
    assert len(set(calls)) == len(calls)


def test_no_noise_augmentation_freezes_pairs(tiny_dataset, monkeypatch):
    calls = []
    real = training.corrupt

    def spy(image, g, spec):
        calls.append(spec.seed)
        return real(image, g, spec)

    monkeypatch.setattr(training, "corrupt", spy)
    cfg = small_cfg(epochs=2, batch_size=5, noise_augmentation=False)
    train(SMALL_MODEL, cfg, tiny_dataset)
    # 1 val + 9 train corrupted exactly once, reused for both epochs
    assert len(calls) == 1 + 9


def test_gfactor_ablation_sees_flat_maps(tiny_dataset, monkeypatch):
    flats = []
    real = training.corrupt

    def spy(image, g, spec):
        flats.append(bool(np.all(g.values == 1.0)))
        return real(image, g, spec)

    monkeypatch.setattr(training, "corrupt", spy)
    train(SMALL_MODEL, small_cfg(epochs=1, gfactor_augmentation=False),
          tiny_dataset)
    assert flats and all(flats)


def test_gfactor_augmentation_sees_real_maps(tiny_dataset, monkeypatch):
    flats = []
    real = training.corrupt

    def spy(image, g, spec):
        flats.append(bool(np.all(g.values == 1.0)))
        return real(image, g, spec)

    monkeypatch.setattr(training, "corrupt", spy)
    train(SMALL_MODEL, small_cfg(epochs=1), tiny_dataset)
    assert not any(flats)


def test_train_loss_decreases(tiny_dataset):
    _, hist = train(SMALL_MODEL, small_cfg(epochs=3), tiny_dataset)
    assert hist["train_loss"][-1] < hist["train_loss"][0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_stops_and_flags(tiny_dataset):
    cfg = small_cfg(epochs=3, lr=1e12)
    model, hist = train(SMALL_MODEL, cfg, tiny_dataset)
    assert hist["diverged"]
    assert len(hist["train_loss"]) < 3 or len(hist["val_loss"]) < 3
    for p in model.params():
        assert np.all(np.isfinite(p.value))


def test_train_rejects_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        train(SMALL_MODEL, small_cfg(), [])


def test_train_rejects_oversized_patches(tiny_dataset):
    cfg = small_cfg(patch_sizes=(48,))
    with pytest.raises(ValueError, match="patch"):
        train(SMALL_MODEL, cfg, tiny_dataset)


def test_sophia_optimizer_runs(tiny_dataset):
    _, hist = train(SMALL_MODEL, small_cfg(epochs=1, optimizer="sophia"),
                    tiny_dataset)
    assert len(hist["train_loss"]) == 1
    assert not hist["diverged"]
