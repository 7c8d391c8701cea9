"""Temporal window sampling with a pairwise-overlap cap."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FeasibilityWarning, InputError


@dataclass(frozen=True)
class CropConfig:
    num_windows: int = 2
    crop_len: int = 64
    max_overlap: float = 0.0  # fraction of crop_len two windows may share
    max_rejection_attempts: int = 100

    def __post_init__(self):
        if self.num_windows < 2:
            raise ConfigError(f"num_windows must be >= 2, got {self.num_windows}")
        if self.crop_len < 1:
            raise ConfigError(f"crop_len must be >= 1, got {self.crop_len}")
        if not 0.0 <= self.max_overlap < 1.0:
            raise ConfigError(f"max_overlap must lie in [0, 1), got {self.max_overlap}")
        if self.max_rejection_attempts < 1:
            raise ConfigError("max_rejection_attempts must be >= 1")

    @property
    def overlap_cap(self) -> int:
        """Largest number of shared timepoints allowed between two windows."""
        return int(np.floor(self.max_overlap * self.crop_len))

    @property
    def min_gap(self) -> int:
        """Smallest start-to-start distance that respects the cap."""
        return self.crop_len - self.overlap_cap


def feasible(T: int, cfg: CropConfig) -> bool:
    m, L = cfg.num_windows, cfg.crop_len
    return m * L - (m - 1) * cfg.overlap_cap <= T


def overlaps(starts, L: int) -> np.ndarray:
    """Pairwise overlap lengths (in timepoints) for windows of length L."""
    s = np.asarray(starts, dtype=np.int64)
    return np.maximum(0, L - np.abs(s[:, None] - s[None, :]))


def even_starts(T: int, cfg: CropConfig) -> np.ndarray:
    m, span = cfg.num_windows, T - cfg.crop_len
    return np.rint(np.arange(m) * span / (m - 1)).astype(np.int64)


def _repair(starts: np.ndarray, gap: int, hi: int) -> np.ndarray:
    # Forward pass pushes windows apart, backward pass pulls the tail back
    # inside [0, hi]. Both passes terminate within bounds whenever the
    # placement is feasible, i.e. (M - 1) * gap <= hi.
    s = np.sort(starts)
    for i in range(1, len(s)):
        s[i] = max(s[i], s[i - 1] + gap)
    s[-1] = min(s[-1], hi)
    for i in range(len(s) - 2, -1, -1):
        s[i] = min(s[i], s[i + 1] - gap)
    return s


def _stratified_jitter(rng: np.random.Generator, T: int, cfg: CropConfig) -> np.ndarray:
    hi = T - cfg.crop_len
    half = cfg.overlap_cap // 2
    jitter = rng.integers(-half, half + 1, size=cfg.num_windows)
    s = np.clip(even_starts(T, cfg) + jitter, 0, hi)
    return _repair(s, cfg.min_gap, hi)


def sample_windows(rng: np.random.Generator, T: int, cfg: CropConfig) -> np.ndarray:
    """Draw ``num_windows`` sorted window starts for a record of length ``T``.

    Rejection sampling of i.i.d. uniform starts first; after
    ``max_rejection_attempts`` failures, evenly spaced anchors with a random
    jitter of at most half the overlap allowance, repaired to the cap.
    Infeasible requests get evenly spaced starts and a FeasibilityWarning.
    """
    L = cfg.crop_len
    if L > T:
        raise InputError(f"crop_len {L} exceeds record length {T}")
    if not feasible(T, cfg):
        warnings.warn(
            f"{cfg.num_windows} windows of {L} with max_overlap={cfg.max_overlap} do not fit in {T} timepoints; "
            "using evenly spaced windows",
            FeasibilityWarning,
            stacklevel=2,
        )
        return even_starts(T, cfg)
    hi, gap = T - L, cfg.min_gap
    s = np.sort(rng.integers(0, hi + 1, size=cfg.num_windows))
    if np.all(np.diff(s) >= gap):
        return s
    # remaining attempts drawn as one block; the first accepted row wins
    rest = cfg.max_rejection_attempts - 1
    if rest:
        block = np.sort(rng.integers(0, hi + 1, size=(rest, cfg.num_windows)), axis=1)
        ok = np.flatnonzero(np.all(np.diff(block, axis=1) >= gap, axis=1))
        if ok.size:
            return block[ok[0]]
    return _stratified_jitter(rng, T, cfg)


def extract(record, starts, L: int) -> np.ndarray:
    """Crop a Record (or a bare (C, T) array) at each start; returns (M, C, L)."""
    signal = getattr(record, "signal", record)
    starts = np.asarray(starts, dtype=np.int64)
    T = signal.shape[-1]
    if np.any(starts < 0) or np.any(starts + L > T):
        raise InputError(f"window start out of range for T={T}, L={L}: {starts.tolist()}")
    idx = starts[:, None] + np.arange(L)[None, :]
    return np.ascontiguousarray(np.moveaxis(signal[:, idx], 1, 0))


def extract_batch(signals: np.ndarray, starts: np.ndarray, L: int) -> np.ndarray:
    """Crop (N, C, T) signals with (N, M) starts into (N*M, C, L).

    Row ``n * M + m`` holds window ``m`` of record ``n``.
    """
    n, m = starts.shape
    T = signals.shape[-1]
    if np.any(starts < 0) or np.any(starts + L > T):
        raise InputError(f"window start out of range for T={T}, L={L}")
    idx = starts[:, :, None] + np.arange(L)[None, None, :]  # (N, M, L)
    crops = signals[np.arange(n)[:, None, None, None], np.arange(signals.shape[1])[None, None, :, None], idx[:, :, None, :]]
    return crops.reshape(n * m, signals.shape[1], L)
