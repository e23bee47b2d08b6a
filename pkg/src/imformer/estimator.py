"""Scikit-learn style front door for the denoising kit.

ImformerDenoiser wraps dataset corruption, training, and tiled
inference behind the fit/transform/predict conventions, so the kit
slots into sklearn pipelines, grid search, and clone(). Constructor
arguments are stored verbatim (sklearn contract); everything is
validated when fit builds the real configs.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .inference import OVERLAP_DEFAULT, TILE_DEFAULT, denoise
from .losses import LossWeights
from .models import ModelConfig
from .noise import ComplexImage, GFactorMap
from .training import TrainConfig, TrainSample, train

__all__ = ["ImformerDenoiser"]


def _as_pair(entry):
    """Accept TrainSample, EvalSample, or a plain (image, g) pair."""
    if hasattr(entry, "image") and hasattr(entry, "g"):
        img, g = entry.image, entry.g
    elif hasattr(entry, "noisy") and hasattr(entry, "g"):
        img, g = entry.noisy, entry.g
    elif isinstance(entry, (tuple, list)) and len(entry) == 2:
        img, g = entry
    else:
        raise TypeError(
            f"expected (ComplexImage, GFactorMap) pair, got {type(entry).__name__}")
    if not isinstance(img, ComplexImage) or not isinstance(g, GFactorMap):
        raise TypeError(
            f"expected (ComplexImage, GFactorMap) pair, got "
            f"({type(img).__name__}, {type(g).__name__})")
    return img, g


class ImformerDenoiser(TransformerMixin, BaseEstimator):
    """Denoising transformer over (complex image, g-factor map) pairs.

    fit() trains on clean samples, corrupting them on the fly in
    SNR units; transform() assumes its inputs are already noise
    normalized and returns denoised images in the same units.
    """

    def __init__(self, arch="unet", blocks="TLG,TLG", base_channels=16,
                 heads=4, window=8, stride=8, relative_bias=False,
                 epochs=5, patch_sizes=(32, 64), batch_size=2,
                 optimizer="adamw", lr=1e-3, weight_decay=0.0,
                 val_fraction=0.10, noise_sigma=(2.0, 6.0), acceleration=3,
                 partial_fourier=0.75, filter_strength=0.5,
                 noise_augmentation=True, gfactor_augmentation=True,
                 w_mse=1.0, w_l1=1.0, w_perp=1.0, w_psnr=1.0,
                 seed=0, tile=TILE_DEFAULT, overlap=OVERLAP_DEFAULT):
        self.arch = arch
        self.blocks = blocks
        self.base_channels = base_channels
        self.heads = heads
        self.window = window
        self.stride = stride
        self.relative_bias = relative_bias
        self.epochs = epochs
        self.patch_sizes = patch_sizes
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.noise_sigma = noise_sigma
        self.acceleration = acceleration
        self.partial_fourier = partial_fourier
        self.filter_strength = filter_strength
        self.noise_augmentation = noise_augmentation
        self.gfactor_augmentation = gfactor_augmentation
        self.w_mse = w_mse
        self.w_l1 = w_l1
        self.w_perp = w_perp
        self.w_psnr = w_psnr
        self.seed = seed
        self.tile = tile
        self.overlap = overlap

    # -- config assembly -----------------------------------------

    def _model_config(self):
        return ModelConfig(kind=self.arch, block_cfg=self.blocks,
                           base_channels=self.base_channels,
                           heads=self.heads, window=self.window,
                           stride=self.stride,
                           relative_bias=self.relative_bias)

    def _train_config(self):
        weights = LossWeights(w_mse=self.w_mse, w_l1=self.w_l1,
                              w_perp=self.w_perp, w_psnr=self.w_psnr)
        return TrainConfig(
            epochs=self.epochs, patch_sizes=tuple(self.patch_sizes),
            batch_size=self.batch_size, optimizer=self.optimizer,
            lr=self.lr, weight_decay=self.weight_decay,
            val_fraction=self.val_fraction, seed=self.seed,
            loss_weights=weights, noise_sigma=tuple(self.noise_sigma),
            acceleration=self.acceleration,
            partial_fourier=self.partial_fourier,
            filter_strength=self.filter_strength,
            noise_augmentation=self.noise_augmentation,
            gfactor_augmentation=self.gfactor_augmentation)

    # -- sklearn surface -----------------------------------------

    def fit(self, X, y=None):
        """Train on clean samples; X holds (image, g-factor) pairs.

        y is ignored; targets come from corrupting X internally.
        """
        samples = [TrainSample(*_as_pair(e)) for e in X]
        if not samples:
            raise ValueError("fit needs at least one sample")
        model, history = train(self._model_config(), self._train_config(),
                               samples)
        self.model_ = model
        self.history_ = history
        return self

    def transform(self, X):
        """Denoise each (image, g-factor) pair; returns a list of
        ComplexImage in the same intensity units as the inputs."""
        check_is_fitted(self, "model_")
        out = []
        for e in X:
            img, g = _as_pair(e)
            out.append(denoise(self.model_, img, g, tile=self.tile,
                               overlap=self.overlap))
        return out

    def predict(self, X):
        return self.transform(X)
