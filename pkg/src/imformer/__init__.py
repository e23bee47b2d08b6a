"""SNR-unit MRI denoising kit.

Noise simulation in SNR units, imaging-transformer denoisers on a
small explicit autodiff tape, composite objectives, local model
probes, and a training/inference pipeline with a CLI.
"""

__version__ = "0.1.0"

from .engine import Tape, Tensor, Param, backward
from .noise import (
    ComplexImage,
    GFactorMap,
    KspaceFilter,
    NoiseSpec,
    corrupt,
    make_correlated_unit_noise,
    synth_gfactor,
)
from .phantom import PhantomSpec, gen_phantom
from .models import ModelConfig, build_model, count_parameters
from .losses import LossWeights, composite_loss
from .metrics import MetricsRecord, compute_metrics, metrics_to_csv
from .cim import (
    ChecksumError,
    load_checkpoint,
    read_cim,
    read_gfactor,
    save_checkpoint,
    write_cim,
    write_gfactor,
)
from .training import TrainConfig, TrainSample, make_dataset, sample_patches, train
from .inference import (
    EvalSample,
    baseline_metrics,
    denoise,
    evaluate,
    make_eval_set,
    make_holdout_set,
)
from .probes import ProbePoint, ProbeReport, local_psf, local_linearity_ratio, run_probes
from .estimator import ImformerDenoiser

__all__ = [
    "Tape", "Tensor", "Param", "backward",
    "ComplexImage", "GFactorMap", "KspaceFilter", "NoiseSpec",
    "corrupt", "make_correlated_unit_noise", "synth_gfactor",
    "PhantomSpec", "gen_phantom",
    "ModelConfig", "build_model", "count_parameters",
    "LossWeights", "composite_loss",
    "MetricsRecord", "compute_metrics", "metrics_to_csv",
    "ChecksumError", "load_checkpoint", "save_checkpoint",
    "read_cim", "write_cim", "read_gfactor", "write_gfactor",
    "TrainConfig", "TrainSample", "make_dataset", "sample_patches", "train",
    "EvalSample", "baseline_metrics", "denoise", "evaluate",
    "make_eval_set", "make_holdout_set",
    "ProbePoint", "ProbeReport", "local_psf", "local_linearity_ratio", "run_probes",
    "ImformerDenoiser",
    "__version__",
]
