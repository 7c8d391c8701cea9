"""Experiment runner, grid execution and result persistence.

Results layout under a root directory::

    runs/<tag>/<config-hash>/<seed>.record   one JSON document per run
    index.csv                                one row per run, rebuilt from records
    aggregate.csv                            seed-aggregated rows per configuration

The config hash covers everything except the seed, so all seeds of one grid
point share a directory.  Records are written once and never modified;
the index is always derived from them.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import itertools
import json
import logging
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import multiprocessing as mp
import numpy as np
import torch

from .data import Dataset, SyntheticSpec, generate_synthetic, load_dir, split
from .encoder import forward_features
from .evaluate import ProbeConfig, aggregate_seeds, metric_report, train_probe
from .pretrain import PretrainConfig, pretrain

log = logging.getLogger(__name__)

RESULTS_ENV = "POLYWIN_RESULTS_DIR"
INDEX_COLUMNS = [
    "tag", "views", "crop", "overlap", "epochs", "batch", "loss", "seed",
    "f1", "auroc", "recall", "precision", "pretrain_seconds", "config_hash", "status",
]
METRICS = ("f1", "auroc", "recall", "precision")

# grid axis name -> (section, field) inside PretrainConfig
AXES = {
    "views": ("crop", "num_windows"),
    "crop": ("crop", "crop_len"),
    "overlap": ("crop", "max_overlap"),
    "epochs": (None, "epochs"),
    "batch": (None, "batch_size"),
    "loss": (None, "loss_kind"),
    "tau": (None, "tau"),
}


def results_root(default: str | Path = "results") -> Path:
    return Path(os.environ.get(RESULTS_ENV, default))


@dataclass(frozen=True)
class ExperimentConfig:
    pretrain: PretrainConfig
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    data_path: str | None = None
    synthetic: SyntheticSpec | None = None
    tag: str = "default"

    def __post_init__(self):
        if (self.data_path is None) == (self.synthetic is None):
            raise ValueError("exactly one of data_path or synthetic must be given")

    @property
    def seed(self) -> int:
        return self.pretrain.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, pretrain=replace(self.pretrain, seed=seed), probe=replace(self.probe, seed=seed))

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "pretrain": self.pretrain.to_dict(),
            "probe": asdict(self.probe),
            "data_path": self.data_path,
            "synthetic": None if self.synthetic is None else asdict(self.synthetic),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        syn = d.get("synthetic")
        if syn is not None:
            syn = SyntheticSpec(**{**syn, "beat_rate_range": tuple(syn["beat_rate_range"])})
        return cls(
            pretrain=PretrainConfig.from_dict(d["pretrain"]),
            probe=ProbeConfig(**d["probe"]),
            data_path=d.get("data_path"),
            synthetic=syn,
            tag=d.get("tag", "default"),
        )

    def config_hash(self) -> str:
        d = self.to_dict()
        d["pretrain"].pop("seed")
        d["probe"].pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def record_path(self, root: Path) -> Path:
        return Path(root) / "runs" / self.tag / self.config_hash() / f"{self.seed}.record"


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "torch_threads": torch.get_num_threads(),
    }


@lru_cache(maxsize=4)
def _synthetic(spec: SyntheticSpec) -> Dataset:
    return generate_synthetic(spec)


def load_source(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic is not None:
        return _synthetic(cfg.synthetic)
    return load_dir(cfg.data_path)


def _axis_values(cfg: PretrainConfig) -> dict:
    return {
        "views": cfg.crop.num_windows,
        "crop": cfg.crop.crop_len,
        "overlap": cfg.crop.max_overlap,
        "epochs": cfg.epochs,
        "batch": cfg.batch_size,
        "loss": cfg.loss_kind,
    }


def run_experiment(cfg: ExperimentConfig, results_dir: str | Path | None = None) -> dict:
    """Pre-train, freeze, probe, and report validation and test metrics.

    Failures produce a record with ``status == "error"`` rather than raising.
    When ``results_dir`` is given the record is written to its run file.
    """
    record: dict = {
        "status": "ok",
        "tag": cfg.tag,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "axes": _axis_values(cfg.pretrain),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "machine": machine_descriptor(),
        "warnings": [],
    }
    try:
        ds = load_source(cfg)
        train, val, test = split(ds)
        result = pretrain(train, cfg.pretrain)
        record["warnings"].extend(result.warnings)
        record["loss_trace"] = result.loss_trace
        record["epoch_seconds"] = result.epoch_seconds
        record["pretrain_seconds"] = result.total_seconds
        t0 = time.monotonic()
        feats = [forward_features(result.encoder, s.signals) for s in (train, val, test)]
        record["feature_seconds"] = time.monotonic() - t0
        t0 = time.monotonic()
        probe = train_probe(feats[0], train.labels, feats[1], val.labels, cfg.probe, cfg.pretrain.optim)
        record["probe_seconds"] = time.monotonic() - t0
        record["probe_best_epoch"] = probe.best_epoch
        names = ds.class_names
        record["validation"] = metric_report(
            probe.probe.predict_proba(feats[1]), val.labels, cfg.probe.threshold, names
        ).to_dict()
        # test split touched exactly once, after checkpoint selection
        record["test"] = metric_report(
            probe.probe.predict_proba(feats[2]), test.labels, cfg.probe.threshold, names
        ).to_dict()
    except Exception as exc:  # noqa: BLE001 - grid policy: record and continue
        record["status"] = "error"
        record["error"] = f"{type(exc).__name__}: {exc}"
        record["traceback"] = traceback.format_exc()
        log.warning("run %s seed %s failed: %s", record["config_hash"], cfg.seed, record["error"])
    if results_dir is not None:
        write_record(record, cfg.record_path(Path(results_dir)))
    return record


def write_record(record: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def read_records(root: str | Path) -> list[dict]:
    root = Path(root)
    out = [json.loads(p.read_text(encoding="utf-8")) for p in sorted((root / "runs").glob("*/*/*.record"))]
    out.sort(key=lambda r: (r["tag"], r["config_hash"], r["seed"]))
    return out


def expand_grid(base: ExperimentConfig, axes: dict[str, Sequence], seeds: Iterable[int]) -> list[ExperimentConfig]:
    """Cartesian product of axis values and seeds applied to ``base``."""
    unknown = set(axes) - set(AXES)
    if unknown:
        raise ValueError(f"unknown grid axes: {sorted(unknown)}; valid: {sorted(AXES)}")
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise ValueError("grid axes must be non-empty")
    seeds = list(seeds)
    names = list(axes)
    configs = []
    for combo in itertools.product(*(axes[n] for n in names)):
        pre = base.pretrain
        for name, value in zip(names, combo):
            section, attr = AXES[name]
            if section is None:
                pre = replace(pre, **{attr: value})
            else:
                pre = replace(pre, **{section: replace(getattr(pre, section), **{attr: value})})
        point = replace(base, pretrain=pre)
        configs.extend(point.with_seed(s) for s in seeds)
    return configs


def _worker(cfg_dict: dict, root: str) -> dict:
    torch.set_num_threads(1)
    return run_experiment(ExperimentConfig.from_dict(cfg_dict), root)


def run_grid(
    base: ExperimentConfig,
    axes: dict[str, Sequence],
    seeds: Iterable[int],
    results_dir: str | Path,
    workers: int = 1,
    resume: bool = True,
) -> tuple[list[dict], list[dict]]:
    """Execute every grid point for every seed; returns (records, aggregate rows).

    Completed runs (an ``ok`` record already on disk) are skipped when
    ``resume`` is set.  ``index.csv`` and ``aggregate.csv`` are rewritten
    from the records on disk at the end.
    """
    root = Path(results_dir)
    configs = expand_grid(base, axes, seeds)
    pending = []
    for cfg in configs:
        path = cfg.record_path(root)
        if resume and path.exists():
            try:
                if json.loads(path.read_text(encoding="utf-8")).get("status") == "ok":
                    continue
            except json.JSONDecodeError:
                pass
        pending.append(cfg)
    log.info("grid: %d runs, %d already complete", len(configs), len(configs) - len(pending))
    if workers > 1 and len(pending) > 1:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(_worker, c.to_dict(), str(root)) for c in pending]
            for f in futures:
                f.result()
    else:
        for i, cfg in enumerate(pending, 1):
            log.info("run %d/%d %s seed %d", i, len(pending), cfg.config_hash(), cfg.seed)
            run_experiment(cfg, root)
    wanted = {(c.config_hash(), c.seed) for c in configs}
    records = [r for r in read_records(root) if (r["config_hash"], r["seed"]) in wanted]
    write_index(root)
    aggregate = aggregate_records(records)
    write_aggregate(root, aggregate_records(read_records(root)))
    return records, aggregate


def index_rows(records: Iterable[dict]) -> list[dict]:
    rows = []
    for r in records:
        test = r.get("test") or {}
        row = {"tag": r["tag"], **r["axes"], "seed": r["seed"]}
        for m in METRICS:
            row[m] = test.get(m, "")
        row["pretrain_seconds"] = r.get("pretrain_seconds", "")
        row["config_hash"] = r["config_hash"]
        row["status"] = r["status"]
        rows.append(row)
    return rows


def write_index(root: str | Path) -> Path:
    root = Path(root)
    path = root / "index.csv"
    root.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=INDEX_COLUMNS)
        w.writeheader()
        w.writerows(index_rows(read_records(root)))
    return path


def aggregate_records(records: Iterable[dict]) -> list[dict]:
    """One row per configuration: mean and 95% CI of each test metric over ok seeds."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["tag"], r["config_hash"]), []).append(r)
    rows = []
    for (tag, h), runs in sorted(groups.items()):
        ok = [r for r in runs if r["status"] == "ok"]
        row = {"tag": tag, "config_hash": h, **runs[0]["axes"], "n_runs": len(runs), "n_ok": len(ok)}
        for m in METRICS + ("pretrain_seconds", "epoch_seconds"):
            if m == "epoch_seconds":
                vals = [float(np.mean(r["epoch_seconds"])) for r in ok]
            elif m == "pretrain_seconds":
                vals = [r["pretrain_seconds"] for r in ok]
            else:
                vals = [r["test"][m] for r in ok]
            if len(vals) >= 2:
                mean, lo, hi = aggregate_seeds(vals)
            elif vals:
                mean, lo, hi = float(vals[0]), float("nan"), float("nan")
            else:
                mean = lo = hi = float("nan")
            row[m] = mean
            row[f"{m}_ci_low"] = lo
            row[f"{m}_ci_high"] = hi
        rows.append(row)
    return rows


def write_aggregate(root: str | Path, rows: list[dict]) -> Path:
    path = Path(root) / "aggregate.csv"
    if not rows:
        path.write_text("")
        return path
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path


def wallclock_table(records: Iterable[dict]) -> dict[tuple[int, int], float]:
    """Mean per-epoch pre-training seconds keyed by (views, epochs)."""
    acc: dict[tuple[int, int], list[float]] = {}
    for r in records:
        if r["status"] != "ok":
            continue
        key = (r["axes"]["views"], r["axes"]["epochs"])
        acc.setdefault(key, []).append(float(np.mean(r["epoch_seconds"])))
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}

