"""Linear probe on frozen features and multi-label metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import expit

from . import optim
from .errors import ConfigError, DataError, InputError, MetricError


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 90
    threshold: float = 0.5
    batch_size: int = 128
    seed: int = 0
    selection_metric: str = "f1"  # validation macro F1, fixed

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("probe epochs must be >= 1")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("probe batch_size must be >= 1")
        if self.selection_metric != "f1":
            raise ConfigError("model selection is fixed to validation F1")


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def probe_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Multi-label one-vs-all soft-margin loss, mean over batch and classes.

    ``-(1/(B*K)) sum [y log sigmoid(x) + (1 - y) log sigmoid(-x)]``, written
    as softplus terms. Returns the value and the gradient w.r.t. ``logits``.
    """
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets)
    if x.shape != y.shape:
        raise InputError(f"logits {x.shape} and targets {y.shape} differ in shape")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("targets must be 0/1")
    y = y.astype(np.float64)
    n = x.size
    value = float(np.sum(y * _softplus(-x) + (1.0 - y) * _softplus(x)) / n)
    grad = (expit(x) - y) / n
    return value, grad


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def auroc_per_class(scores: np.ndarray, targets: np.ndarray) -> list[float | None]:
    """Rank-statistic AUROC per class (ties count half); None where undefined."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.ndim == 1:
        scores, targets = scores[:, None], targets[:, None]
    out: list[float | None] = []
    for k in range(scores.shape[1]):
        y = targets[:, k] == 1
        n_pos, n_neg = int(y.sum()), int((~y).sum())
        if n_pos == 0 or n_neg == 0:
            out.append(None)
            continue
        ranks = stats.rankdata(scores[:, k])  # average ranks for ties
        u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
        out.append(float(u / (n_pos * n_neg)))
    return out


def auroc_macro(scores: np.ndarray, targets: np.ndarray) -> float:
    per = auroc_per_class(scores, targets)
    defined = [v for v in per if v is not None]
    if not defined:
        raise MetricError("AUROC undefined for every class (each needs a positive and a negative)")
    return float(np.mean(defined))


def _prf_counts(pred: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    return precision, recall, f1


def prf_per_class(scores: np.ndarray, targets: np.ndarray, threshold: float = 0.5) -> list[tuple[float, float, float]]:
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.ndim == 1:
        scores, targets = scores[:, None], targets[:, None]
    pred = scores >= threshold
    truth = targets == 1
    return [_prf_counts(pred[:, k], truth[:, k]) for k in range(scores.shape[1])]


def prf_at_threshold(scores: np.ndarray, targets: np.ndarray, threshold: float = 0.5) -> tuple[float, float, float]:
    """Macro (precision, recall, f1) with predictions ``score >= threshold``.

    A ratio with a zero denominator counts as 0.
    """
    per = np.array(prf_per_class(scores, targets, threshold))
    return float(per[:, 0].mean()), float(per[:, 1].mean()), float(per[:, 2].mean())


@dataclass
class MetricReport:
    f1: float
    auroc: float
    recall: float
    precision: float
    per_class: list[dict] = field(default_factory=list)
    auroc_excluded: list[str] = field(default_factory=list)
    zero_division: list[str] = field(default_factory=list)
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def metric_report(probs: np.ndarray, targets: np.ndarray, threshold: float = 0.5, class_names=None) -> MetricReport:
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    k = probs.shape[1]
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    aurocs = auroc_per_class(probs, targets)
    prf = prf_per_class(probs, targets, threshold)
    per_class, zero_div = [], []
    pred = probs >= threshold
    for j in range(k):
        p, r, f = prf[j]
        truth = targets[:, j] == 1
        if not (pred[:, j].any() and truth.any()):
            zero_div.append(names[j])
        per_class.append({"class": names[j], "precision": p, "recall": r, "f1": f, "auroc": aurocs[j]})
    defined = [a for a in aurocs if a is not None]
    auroc = float(np.mean(defined)) if defined else float("nan")
    return MetricReport(
        f1=float(np.mean([x[2] for x in prf])),
        auroc=auroc,
        recall=float(np.mean([x[1] for x in prf])),
        precision=float(np.mean([x[0] for x in prf])),
        per_class=per_class,
        auroc_excluded=[names[j] for j in range(k) if aurocs[j] is None],
        zero_division=zero_div,
        threshold=threshold,
    )


def aggregate_seeds(values) -> tuple[float, float, float]:
    """Mean and 95% Student-t confidence interval over seeds."""
    x = np.asarray(list(values), dtype=np.float64)
    if x.size < 2:
        raise InputError("need at least two values to form a confidence interval")
    mean = float(x.mean())
    half = float(stats.t.ppf(0.975, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return mean, mean - half, mean + half


# ---------------------------------------------------------------------------
# Probe training
# ---------------------------------------------------------------------------


@dataclass
class LinearProbe:
    weight: np.ndarray  # (d, K)
    bias: np.ndarray  # (K,)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weight + self.bias

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return expit(self.logits(features))


@dataclass
class ProbeResult:
    probe: LinearProbe
    best_epoch: int  # 1-based
    best_val_f1: float
    val_f1_trace: list[float]
    train_loss_trace: list[float]


def train_probe(
    features_train: np.ndarray,
    labels_train: np.ndarray,
    features_val: np.ndarray,
    labels_val: np.ndarray,
    cfg: ProbeConfig = ProbeConfig(),
    optim_cfg: optim.OptimConfig | None = None,
) -> ProbeResult:
    """Train a linear one-vs-all classifier; keep the epoch with best validation macro F1.

    Uses AdamW with the warmup-cosine schedule over ``cfg.epochs`` epochs of
    shuffled mini-batches.  Ties in validation F1 keep the earlier epoch.
    """
    xtr = np.asarray(features_train, dtype=np.float64)
    ytr = np.asarray(labels_train)
    xva = np.asarray(features_val, dtype=np.float64)
    yva = np.asarray(labels_val)
    if len(xtr) == 0 or len(xva) == 0:
        raise InputError("probe training needs non-empty train and validation splits")
    d, k = xtr.shape[1], ytr.shape[1]
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(xtr) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    if optim_cfg is None:
        optim_cfg = optim.OptimConfig(total_steps=total, warmup_steps=min(10, total - 1))
    else:
        optim_cfg = replace(optim_cfg, total_steps=total, warmup_steps=min(optim_cfg.warmup_steps, total - 1))
    bound = 1.0 / math.sqrt(d)
    params = {"weight": rng.uniform(-bound, bound, size=(d, k)), "bias": rng.uniform(-bound, bound, size=k)}
    state = optim.OptimState()
    best = (-1.0, 0, {n: p.copy() for n, p in params.items()})
    val_trace, loss_trace = [], []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(xtr))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            xb = xtr[idx]
            value, g = probe_loss(xb @ params["weight"] + params["bias"], ytr[idx])
            grads = {"weight": xb.T @ g, "bias": g.sum(axis=0)}
            optim.step(params, grads, state, optim_cfg, optim.lr_at(step, optim_cfg), no_decay={"bias"})
            step += 1
            losses.append(value)
        loss_trace.append(float(np.mean(losses)))
        probs = expit(xva @ params["weight"] + params["bias"])
        f1 = prf_at_threshold(probs, yva, cfg.threshold)[2]
        val_trace.append(f1)
        if f1 > best[0]:
            best = (f1, epoch, {n: p.copy() for n, p in params.items()})
    f1, epoch, chosen = best
    return ProbeResult(
        probe=LinearProbe(weight=chosen["weight"], bias=chosen["bias"]),
        best_epoch=epoch,
        best_val_f1=f1,
        val_f1_trace=val_trace,
        train_loss_trace=loss_trace,
    )

