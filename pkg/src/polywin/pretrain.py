"""Self-supervised pre-training loop for one configuration."""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import loss as losses
from . import optim
from .data import Dataset
from .encoder import Encoder, EncoderConfig, preset
from .errors import ConfigError, FeasibilityWarning, InputError, NumericError
from .sampler import CropConfig, extract_batch, feasible, sample_windows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    crop: CropConfig = field(default_factory=CropConfig)
    encoder: EncoderConfig = field(default_factory=lambda: preset("tiny-1d-64/32"))
    optim: optim.OptimConfig = field(default_factory=optim.OptimConfig)
    loss_kind: str = "geometric"
    tau: float = losses.DEFAULT_TAU
    batch_size: int = 256
    epochs: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss_kind not in losses.LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}; expected one of {', '.join(losses.LOSS_KINDS)}")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        return cls(
            crop=CropConfig(**d["crop"]),
            encoder=EncoderConfig(**d["encoder"]),
            optim=optim.OptimConfig(**d["optim"]),
            **{k: v for k, v in d.items() if k not in ("crop", "encoder", "optim")},
        )


@dataclass
class PretrainResult:
    encoder: Encoder
    loss_trace: list[float]
    epoch_seconds: list[float]
    total_seconds: float
    steps: int
    warnings: list[str] = field(default_factory=list)

    def write_trace(self, path: str | Path) -> Path:
        """Loss trace as CSV rows ``epoch, mean_loss, seconds``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "seconds"])
            for i, (l, s) in enumerate(zip(self.loss_trace, self.epoch_seconds), start=1):
                w.writerow([i, repr(float(l)), f"{s:.6f}"])
        return path


EpochCallback = Callable[[int, Encoder], None]


def _diagnose(z: np.ndarray, tau: float, grad: np.ndarray | None) -> str:
    S = z @ z.T / tau
    parts = [f"S range [{np.nanmin(S):.4g}, {np.nanmax(S):.4g}]", f"non-finite Z entries {int((~np.isfinite(z)).sum())}"]
    if grad is not None:
        parts.append(f"grad_Z norm {np.linalg.norm(grad):.4g}")
    return "; ".join(parts)


def pretrain(train: Dataset, cfg: PretrainConfig, on_epoch_end: EpochCallback | None = None) -> PretrainResult:
    """Contrastive pre-training; returns the last-epoch encoder.

    Each epoch shuffles the records, drops the trailing partial batch, draws
    fresh windows per record and step, and takes one AdamW update per batch.
    Epoch timing uses a monotonic clock and excludes ``on_epoch_end``.
    """
    n_rec, channels, T = train.shape
    N, M, L = cfg.batch_size, cfg.crop.num_windows, cfg.crop.crop_len
    if L > T:
        raise InputError(f"crop_len {L} exceeds record length {T}")
    steps_per_epoch = n_rec // N
    if steps_per_epoch == 0:
        raise InputError(f"{n_rec} training records cannot fill one batch of {N}")
    notes: list[str] = []
    if not feasible(T, cfg.crop):
        notes.append(
            f"infeasible crop: {M} windows of {L} with max_overlap={cfg.crop.max_overlap} in T={T}; evenly spaced windows used"
        )
    total_steps = cfg.epochs * steps_per_epoch
    ocfg = cfg.optim
    if ocfg.total_steps != total_steps or ocfg.warmup_steps >= total_steps:
        warmup = min(ocfg.warmup_steps, total_steps - 1)
        if warmup != ocfg.warmup_steps:
            notes.append(f"warmup shortened to {warmup} steps (run has {total_steps} steps)")
        ocfg = replace(ocfg, total_steps=total_steps, warmup_steps=warmup)

    enc_cfg = cfg.encoder if cfg.encoder.in_channels == channels else cfg.encoder.with_channels(channels)
    encoder = Encoder(enc_cfg, seed=cfg.seed)
    encoder.train()
    params = encoder.numpy_params()
    no_decay = encoder.no_decay_names()
    state = optim.OptimState()
    mask_shape = (N, M)
    rng = np.random.default_rng(cfg.seed)
    signals = train.signals

    trace, epoch_secs = [], []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        order = rng.permutation(n_rec)
        batch_losses = []
        for b in range(steps_per_epoch):
            idx = order[b * N : (b + 1) * N]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", FeasibilityWarning)
                starts = np.stack([sample_windows(rng, T, cfg.crop) for _ in range(N)])
            crops = extract_batch(signals[idx], starts, L)
            z = encoder.embed(crops).astype(np.float64)
            grad = None
            try:
                out = losses.poly_window_loss(z, *mask_shape, kind=cfg.loss_kind, tau=cfg.tau)
                grad = out.grad_Z
                if not (math.isfinite(out.value) and np.all(np.isfinite(grad))):
                    raise NumericError("non-finite loss or gradient")
            except (NumericError, InputError) as exc:
                raise NumericError(f"epoch {epoch} step {step}: {exc} ({_diagnose(z, cfg.tau, grad)})") from exc
            encoder.backward(grad)
            optim.step(params, encoder.numpy_grads(), state, ocfg, optim.lr_at(step, ocfg), no_decay=no_decay)
            step += 1
            batch_losses.append(out.value)
        epoch_secs.append(time.monotonic() - t0)
        trace.append(float(np.mean(batch_losses)))
        log.info("epoch %d/%d loss %.4f (%.2fs)", epoch, cfg.epochs, trace[-1], epoch_secs[-1])
        if on_epoch_end is not None:
            on_epoch_end(epoch, encoder)
            encoder.train()
    encoder.eval()
    return PretrainResult(
        encoder=encoder,
        loss_trace=trace,
        epoch_seconds=epoch_secs,
        total_seconds=float(sum(epoch_secs)),
        steps=step,
        warnings=notes,
    )


def loss_ceiling(N: int, M: int) -> float:
    """Loss value when every embedding coincides."""
    return math.log(N * M - 1)


def set_single_thread() -> None:
    torch.set_num_threads(1)
