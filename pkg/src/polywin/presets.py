"""Named configurations from the published ablation and best-row table."""

from __future__ import annotations

from dataclasses import replace

from .encoder import preset as encoder_preset
from .optim import OptimConfig
from .pretrain import PretrainConfig
from .sampler import CropConfig

# Ablation axes of the published grid search.
PUBLISHED_AXES: dict[str, list] = {
    "views": [2, 4, 6, 8],
    "crop": [32, 64, 128, 256],
    "overlap": [0.0, 0.25, 0.5, 0.75],
    "epochs": [16, 32, 64, 128, 256],
    "batch": [256, 512, 768, 1024],
    "loss": ["geometric", "arithmetic"],
}
PUBLISHED_SEEDS: list[int] = [0, 42, 123, 555, 789]

# (views, batch, loss, crop, overlap, epochs) of the four reported best rows.
REPORTED_ROWS: dict[str, tuple[int, int, str, int, float, int]] = {
    "table1-row1": (2, 256, "geometric", 64, 0.0, 128),
    "table1-row2": (4, 768, "geometric", 64, 0.5, 64),
    "table1-row3": (6, 256, "geometric", 64, 0.75, 32),
    "table1-row4": (8, 256, "geometric", 64, 0.5, 32),
}

PROBE_EPOCHS = 90
FULL_ENCODER = "resnet18-1d-512/128"
DESK_ENCODER = "tiny-1d-64/32"


def table1_config(name: str, in_channels: int = 12, seed: int = 0) -> PretrainConfig:
    """Pre-training config of one reported row, on the full-size encoder."""
    try:
        views, batch, loss, crop, overlap, epochs = REPORTED_ROWS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(REPORTED_ROWS)}") from None
    return PretrainConfig(
        crop=CropConfig(num_windows=views, crop_len=crop, max_overlap=overlap),
        encoder=encoder_preset(FULL_ENCODER, in_channels),
        optim=OptimConfig(),
        loss_kind=loss,
        batch_size=batch,
        epochs=epochs,
        seed=seed,
    )


def row_echo(cfg: PretrainConfig) -> tuple[int, int, str, int, float, int]:
    """The (views, batch, loss, crop, overlap, epochs) tuple a config corresponds to."""
    return (
        cfg.crop.num_windows,
        cfg.batch_size,
        cfg.loss_kind,
        cfg.crop.crop_len,
        cfg.crop.max_overlap,
        cfg.epochs,
    )


def full_grid_size(axes: dict[str, list] = PUBLISHED_AXES, seeds: list[int] = PUBLISHED_SEEDS) -> int:
    n = len(seeds)
    for values in axes.values():
        n *= len(values)
    return n


def desk_config(**overrides) -> PretrainConfig:
    cfg = PretrainConfig(encoder=encoder_preset(DESK_ENCODER), batch_size=32, epochs=10)
    return replace(cfg, **overrides)
