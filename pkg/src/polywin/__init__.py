"""Multi-window contrastive pre-training for multichannel time series."""

__version__ = "0.1.0"

from .data import Dataset, Record, SyntheticSpec, generate_synthetic, load_dataset, load_dir, save_dir, split
from .encoder import Encoder, EncoderConfig, load_checkpoint, preset, save_checkpoint
from .evaluate import ProbeConfig, metric_report, train_probe
from .loss import oracle_loss, poly_window_loss
from .optim import OptimConfig, lr_at
from .pretrain import PretrainConfig, pretrain
from .sampler import CropConfig, sample_windows

__all__ = [
    "CropConfig",
    "Dataset",
    "Encoder",
    "EncoderConfig",
    "OptimConfig",
    "PretrainConfig",
    "ProbeConfig",
    "Record",
    "SyntheticSpec",
    "generate_synthetic",
    "load_checkpoint",
    "load_dataset",
    "load_dir",
    "lr_at",
    "metric_report",
    "oracle_loss",
    "poly_window_loss",
    "preset",
    "pretrain",
    "sample_windows",
    "save_checkpoint",
    "save_dir",
    "split",
    "train_probe",
]
