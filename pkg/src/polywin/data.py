"""Labeled multichannel records, the on-disk dataset format, fold splits and
a synthetic ECG-like generator.

On-disk layout (two files):

* tensor file: raw little-endian float32, row-major, shape ``(R, C, T)``
* sidecar: UTF-8 JSON document::

    {
      "format": "polywin-dataset",
      "version": 1,
      "shape": [R, C, T],
      "class_names": ["...", ...],
      "split_rule": {"1": "train", ..., "10": "test"},
      "normalize": false,
      "records": [{"id": "...", "labels": [0, 1, ...], "fold": 1}, ...]
    }

``split_rule`` and ``normalize`` are optional on input; the writer always
emits them so that written files round-trip byte-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError

FORMAT_NAME = "polywin-dataset"
FORMAT_VERSION = 1
SIGNAL_FILE = "signals.f32"
META_FILE = "meta.json"
SPLITS = ("train", "validation", "test")

# PTB-XL recommended protocol: folds 1-8 train, 9 validation, 10 test.
DEFAULT_SPLIT_RULE: dict[int, str] = {**{f: "train" for f in range(1, 9)}, 9: "validation", 10: "test"}


@dataclass(frozen=True, eq=False)
class Record:
    id: str
    signal: np.ndarray  # (C, T) float32
    labels: np.ndarray  # (K,) int8, multi-hot
    fold: int

    def __post_init__(self):
        sig = self.signal
        if sig.ndim != 2 or sig.shape[0] < 1 or sig.shape[1] < 1:
            raise DataError(f"record {self.id!r}: signal must be a non-empty C x T matrix, got shape {sig.shape}")
        if not np.all(np.isfinite(sig)):
            raise DataError(f"record {self.id!r}: non-finite sample")
        if self.labels.ndim != 1 or not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError(f"record {self.id!r}: labels must be a 0/1 vector")
        if int(self.fold) < 1:
            raise DataError(f"record {self.id!r}: fold must be >= 1, got {self.fold}")

    @property
    def channels(self) -> int:
        return self.signal.shape[0]

    @property
    def timepoints(self) -> int:
        return self.signal.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    records: tuple[Record, ...]
    class_names: tuple[str, ...]
    split_rule: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_SPLIT_RULE))
    normalize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "split_rule", {int(k): v for k, v in self.split_rule.items()})
        for fold, name in self.split_rule.items():
            if name not in SPLITS:
                raise ConfigError(f"split_rule maps fold {fold} to unknown split {name!r}")
        k = len(self.class_names)
        if self.records:
            c, t = self.records[0].signal.shape
            for r in self.records:
                if r.signal.shape != (c, t):
                    raise DataError(f"record {r.id!r} has shape {r.signal.shape}, expected {(c, t)}")
                if r.labels.shape[0] != k:
                    raise DataError(f"record {r.id!r} has {r.labels.shape[0]} labels, expected {k}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def shape(self) -> tuple[int, int, int]:
        if not self.records:
            return (0, 0, 0)
        c, t = self.records[0].signal.shape
        return (len(self.records), c, t)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @cached_property
    def raw_signals(self) -> np.ndarray:
        """All signals stacked as (R, C, T) float32, as stored."""
        if not self.records:
            return np.zeros((0, 0, 0), dtype=np.float32)
        return np.stack([r.signal for r in self.records]).astype(np.float32, copy=False)

    @cached_property
    def signals(self) -> np.ndarray:
        """Model input: raw signals, z-scored per record and channel when ``normalize`` is set."""
        x = self.raw_signals
        if not self.normalize:
            return x
        return zscore(x)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.stack([r.labels for r in self.records]).astype(np.int8) if self.records else np.zeros((0, self.num_classes), np.int8)

    @property
    def folds(self) -> np.ndarray:
        return np.array([r.fold for r in self.records], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        sub = Dataset(
            records=tuple(self.records[i] for i in indices),
            class_names=self.class_names,
            split_rule=self.split_rule,
            normalize=self.normalize,
        )
        if "raw_signals" in self.__dict__ and len(indices):
            sub.__dict__["raw_signals"] = self.raw_signals[np.asarray(indices)]
        return sub

    @classmethod
    def from_arrays(
        cls,
        signals: np.ndarray,
        labels: np.ndarray,
        folds: Sequence[int],
        class_names: Sequence[str],
        ids: Sequence[str] | None = None,
        split_rule: Mapping[int, str] | None = None,
        normalize: bool = False,
    ) -> "Dataset":
        signals = np.ascontiguousarray(signals, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int8)
        if ids is None:
            ids = [f"rec{i:06d}" for i in range(signals.shape[0])]
        records = tuple(
            Record(id=str(ids[i]), signal=signals[i], labels=labels[i], fold=int(folds[i]))
            for i in range(signals.shape[0])
        )
        ds = cls(
            records=records,
            class_names=tuple(class_names),
            split_rule=dict(DEFAULT_SPLIT_RULE if split_rule is None else split_rule),
            normalize=normalize,
        )
        ds.__dict__["raw_signals"] = signals
        return ds


def zscore(x: np.ndarray) -> np.ndarray:
    """Per-record, per-channel standardization over the time axis."""
    x = x.astype(np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    sd[sd == 0] = 1.0
    return ((x - mu) / sd).astype(np.float32)


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------


def _parse_sidecar(meta_path: Path) -> dict:
    try:
        meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: sidecar is not valid JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{meta_path}: sidecar must be a JSON object")
    for key in ("shape", "class_names", "records"):
        if key not in meta:
            raise FormatError(f"{meta_path}: missing field {key!r}")
    if meta.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise FormatError(f"{meta_path}: unknown format {meta.get('format')!r}")
    if int(meta.get("version", FORMAT_VERSION)) > FORMAT_VERSION:
        raise FormatError(f"{meta_path}: unsupported version {meta['version']}")
    shape = meta["shape"]
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(s, int) and s >= 0 for s in shape)):
        raise FormatError(f"{meta_path}: shape must be [R, C, T] of non-negative integers")
    return meta


def load_dataset(signal_path: str | Path, meta_path: str | Path) -> Dataset:
    """Read a tensor file plus its JSON sidecar into a :class:`Dataset`."""
    signal_path, meta_path = Path(signal_path), Path(meta_path)
    meta = _parse_sidecar(meta_path)
    r, c, t = meta["shape"]
    expected = r * c * t * 4
    actual = signal_path.stat().st_size
    if actual != expected:
        raise FormatError(
            f"{signal_path}: sidecar shape {tuple(meta['shape'])} needs {expected} bytes, file has {actual}"
        )
    entries = meta["records"]
    if len(entries) != r:
        raise FormatError(f"{meta_path}: shape declares {r} records but {len(entries)} entries are listed")
    k = len(meta["class_names"])
    raw = np.fromfile(signal_path, dtype="<f4").reshape(r, c, t)
    if not np.all(np.isfinite(raw)):
        bad = int(np.argwhere(~np.isfinite(raw))[0, 0])
        raise DataError(f"{signal_path}: non-finite sample in record {bad}")
    labels = np.zeros((r, k), dtype=np.int8)
    for i, entry in enumerate(entries):
        lab = entry.get("labels")
        if not isinstance(lab, list) or len(lab) != k:
            raise DataError(f"record {entry.get('id', i)!r}: expected {k} labels, got {lab!r}")
        if any(v not in (0, 1) for v in lab):
            raise DataError(f"record {entry.get('id', i)!r}: labels must be 0/1")
        labels[i] = lab
    split_rule = meta.get("split_rule")
    if split_rule is not None:
        try:
            split_rule = {int(f): s for f, s in split_rule.items()}
        except (AttributeError, ValueError) as exc:
            raise FormatError(f"{meta_path}: split_rule must map integer folds to split names") from exc
    return Dataset.from_arrays(
        signals=raw.astype(np.float32, copy=False),
        labels=labels,
        folds=[int(e["fold"]) for e in entries],
        class_names=[str(n) for n in meta["class_names"]],
        ids=[str(e["id"]) for e in entries],
        split_rule=split_rule,
        normalize=bool(meta.get("normalize", False)),
    )


def sidecar_text(dataset: Dataset) -> str:
    """Canonical sidecar serialization (fixed key order, 2-space indent, trailing newline)."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "shape": list(dataset.shape),
        "class_names": list(dataset.class_names),
        "split_rule": {str(f): s for f, s in sorted(dataset.split_rule.items())},
        "normalize": bool(dataset.normalize),
        "records": [
            {"id": r.id, "labels": [int(v) for v in r.labels], "fold": int(r.fold)} for r in dataset.records
        ],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def write_dataset(dataset: Dataset, signal_path: str | Path, meta_path: str | Path) -> None:
    signal_path, meta_path = Path(signal_path), Path(meta_path)
    signal_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    dataset.raw_signals.astype("<f4").tofile(signal_path)
    meta_path.write_text(sidecar_text(dataset), encoding="utf-8")


def load_dir(path: str | Path) -> Dataset:
    path = Path(path)
    return load_dataset(path / SIGNAL_FILE, path / META_FILE)


def save_dir(dataset: Dataset, path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    write_dataset(dataset, path / SIGNAL_FILE, path / META_FILE)
    return path / SIGNAL_FILE, path / META_FILE


def split(dataset: Dataset) -> tuple[Dataset, Dataset, Dataset]:
    """Partition records into (train, validation, test) by fold, preserving order."""
    buckets: dict[str, list[int]] = {s: [] for s in SPLITS}
    for i, rec in enumerate(dataset.records):
        name = dataset.split_rule.get(rec.fold)
        if name is None:
            raise ConfigError(f"record {rec.id!r}: fold {rec.fold} is not covered by the split rule")
        buckets[name].append(i)
    return tuple(dataset.subset(buckets[s]) for s in SPLITS)  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

EFFECT_KINDS = ("rate", "width", "plateau")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic pulse-train generator.

    Class ``k`` applies effect ``EFFECT_KINDS[k % 3]`` for the whole record:
    a faster beat rate, wider pulses, or a raised plateau after every pulse.
    Classes ``k >= 3`` reuse the same effect kinds restricted to a
    class-specific half of the channels.
    """

    num_records: int = 2000
    channels: int = 4
    timepoints: int = 500
    num_classes: int = 3
    beat_rate_range: tuple[float, float] = (6.0, 10.0)
    noise_std: float = 0.3
    seed: int = 0
    wander_std: float = 0.6  # amplitude scale of slow baseline drift

    def __post_init__(self):
        if self.num_records < 1:
            raise ConfigError("num_records must be >= 1")
        if self.channels < 1 or self.timepoints < 1 or self.num_classes < 1:
            raise ConfigError("channels, timepoints and num_classes must be >= 1")
        lo, hi = self.beat_rate_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"beat_rate_range must satisfy 1 <= min <= max, got {self.beat_rate_range}")
        if self.noise_std < 0 or self.wander_std < 0:
            raise ConfigError("noise_std and wander_std must be >= 0")


RATE_FACTOR = 1.6
PULSE_WIDTH = 2.0  # Gaussian sigma in samples
WIDE_PULSE_WIDTH = 4.5
PLATEAU_LEVEL = 0.35


def _class_channels(k: int, channels: int) -> np.ndarray:
    if k < 3 or channels == 1:
        return np.ones(channels, dtype=bool)
    return (np.arange(channels) + k // 3) % 2 == 0


def _pulse_train(active: np.ndarray, base_rate: float, phase_frac: float, gains: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    c, t = spec.channels, spec.timepoints
    out = np.zeros((c, t), dtype=np.float64)
    grid = np.arange(t, dtype=np.float64)
    for ch in range(c):
        rate, width, plateau = base_rate, PULSE_WIDTH, 0.0
        for k in np.flatnonzero(active):
            if not _class_channels(int(k), c)[ch]:
                continue
            kind = EFFECT_KINDS[k % 3]
            if kind == "rate":
                rate = base_rate * RATE_FACTOR
            elif kind == "width":
                width = WIDE_PULSE_WIDTH
            else:
                plateau = PLATEAU_LEVEL
        period = max(2, int(round(t / rate)))
        phase = int(phase_frac * period)
        centers = np.arange(phase - period, t + period, period, dtype=np.float64)
        d = grid[None, :] - centers[:, None]
        sig = np.exp(-0.5 * (d / width) ** 2).sum(axis=0)
        if plateau:
            # raised segment from 15% to 45% of the beat period after each pulse
            lo, hi = 0.15 * period, 0.45 * period
            sig += plateau * ((d >= lo) & (d < hi)).any(axis=0)
        out[ch] = gains[ch] * sig
    return out


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic multi-label dataset; folds cycle 1..10."""
    rng = np.random.default_rng(spec.seed)
    r, c, t, k = spec.num_records, spec.channels, spec.timepoints, spec.num_classes
    signals = np.empty((r, c, t), dtype=np.float32)
    labels = np.zeros((r, k), dtype=np.int8)
    lo, hi = spec.beat_rate_range
    for i in range(r):
        active = np.zeros(k, dtype=bool)
        while not active.any():
            active = rng.random(k) < 0.5
        base_rate = rng.uniform(lo, hi)
        phase_frac = rng.random()
        gains = rng.uniform(0.6, 1.4, size=c)
        sig = _pulse_train(active, base_rate, phase_frac, gains, spec)
        noise = rng.standard_normal((c, t))
        if spec.noise_std > 0:
            sig = sig + spec.noise_std * noise
        # slow drift: one random sinusoid per channel, 0.5-2 cycles per record
        cycles = rng.uniform(0.5, 2.0, size=(c, 1))
        offset = rng.uniform(0, 2 * np.pi, size=(c, 1))
        amp = rng.standard_normal((c, 1))
        if spec.wander_std > 0:
            sig = sig + spec.wander_std * amp * np.sin(2 * np.pi * cycles * np.arange(t) / t + offset)
        signals[i] = sig
        labels[i] = active
    folds = (np.arange(r) % 10) + 1
    names = [f"{EFFECT_KINDS[j % 3]}{j // 3}" if k > 3 else EFFECT_KINDS[j % 3] for j in range(k)]
    return Dataset.from_arrays(signals, labels, folds, names)


__all__ = [
    "DEFAULT_SPLIT_RULE",
    "Dataset",
    "Record",
    "SyntheticSpec",
    "generate_synthetic",
    "load_dataset",
    "load_dir",
    "save_dir",
    "sidecar_text",
    "split",
    "write_dataset",
    "zscore",
]
