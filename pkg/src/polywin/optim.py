"""AdamW with decoupled weight decay and a warmup-then-cosine schedule.

Parameters and gradients are mappings of name -> numpy array and are updated
in place.  Torch CPU tensors can be passed through ``tensor.numpy()`` views,
which share storage, so the same code drives the encoder and the probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, InputError, NumericError


@dataclass(frozen=True)
class OptimConfig:
    peak_lr: float = 0.01
    weight_decay: float = 1e-4
    epsilon: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 10
    final_lr: float = 1e-6
    total_steps: int = 1000
    decay_norm_and_bias: bool = False

    def __post_init__(self):
        if not 0 < self.final_lr <= self.peak_lr:
            raise ConfigError(f"need 0 < final_lr <= peak_lr, got final_lr={self.final_lr}, peak_lr={self.peak_lr}")
        if self.warmup_steps < 0 or self.warmup_steps >= self.total_steps:
            raise ConfigError(f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps} and {self.total_steps}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.epsilon <= 0:
            raise ConfigError("weight_decay must be >= 0 and epsilon > 0")


def lr_at(step: int, cfg: OptimConfig) -> float:
    """Learning rate for optimizer update ``step`` (0-based).

    Linear ramp ``peak * (step + 1) / warmup`` for the first ``warmup_steps``
    updates, then cosine decay reaching ``final_lr`` at ``total_steps``.
    """
    if not 0 <= step <= cfg.total_steps:
        raise InputError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * (step + 1) / cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimState:
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    cfg: OptimConfig,
    lr: float,
    no_decay: Iterable[str] = (),
) -> tuple[Mapping[str, np.ndarray], OptimState]:
    """One AdamW update, in place.

    ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.
    Names in ``no_decay`` skip the decay term unless
    ``cfg.decay_norm_and_bias`` is set.
    """
    if lr < 0:
        raise InputError(f"learning rate must be >= 0, got {lr}")
    skip = set() if cfg.decay_norm_and_bias else set(no_decay)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InputError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p)
            state.exp_avg_sq[name] = np.zeros_like(p)
        v = state.exp_avg_sq[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
        if name not in skip and cfg.weight_decay:
            update = update + cfg.weight_decay * p
        p -= (lr * update).astype(p.dtype, copy=False)
    return params, state
