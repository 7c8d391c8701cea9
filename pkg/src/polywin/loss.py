"""Poly-window InfoNCE losses.

Embeddings arrive as an ``(N*M, d)`` matrix of unit rows, where row
``a = n * M + m`` is window ``m`` of sample ``n``.  Positives of an anchor
are the other ``M - 1`` windows of the same sample; every other row
(positives included) enters the softmax denominator, the anchor itself
never does.

Two aggregations of the positive probabilities
``p_ab = exp(S_ab) / sum_{c != a} exp(S_ac)`` are provided:

* geometric: ``-mean_a (1/(M-1)) sum_b log p_ab``
* arithmetic: ``-mean_a log((1/(M-1)) sum_b p_ab)``

Both are evaluated in float64 from one similarity matrix.  ``oracle_loss``
evaluates the same quantities pair by pair in plain Python and serves as
the reference in tests and in ``polywin verify``.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, GuardError, InputError

LossKind = Literal["geometric", "arithmetic"]
LOSS_KINDS: tuple[str, ...] = ("geometric", "arithmetic")
DEFAULT_TAU = 0.1
ORACLE_MAX_ROWS = 64


@dataclass(frozen=True)
class Similarity:
    S: np.ndarray  # (NM, NM) float64, S = Z Z^T / tau
    tau: float
    Z: np.ndarray  # float64 embeddings the matrix was built from


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_Z: np.ndarray


def build_mask(N: int, M: int) -> np.ndarray:
    """Boolean positive mask: distinct windows of the same sample."""
    if N < 2:
        raise ConfigError(f"batch size N must be >= 2 (negatives need a second sample), got {N}")
    if M < 2:
        raise ConfigError(f"number of windows M must be >= 2, got {M}")
    sample = np.arange(N * M) // M
    mask = sample[:, None] == sample[None, :]
    np.fill_diagonal(mask, False)
    return mask


def similarity(Z: np.ndarray, tau: float = DEFAULT_TAU, atol: float = 1e-4) -> Similarity:
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise InputError(f"embeddings must be a 2-D matrix, got shape {Z.shape}")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(np.abs(norms - 1.0) > atol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise InputError(f"embedding rows must be L2-normalized (max |norm - 1| = {worst:.3g})")
    return Similarity(S=(Z @ Z.T) / tau, tau=float(tau), Z=Z)


def _logsumexp_rows(S: np.ndarray, keep: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp over entries where ``keep`` is true.

    Returns ``(lse, weights)`` with ``weights`` the row softmax over the kept
    entries (zero elsewhere).  Uses per-row max subtraction.
    """
    masked = np.where(keep, S, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - peak)
    total = e.sum(axis=1, keepdims=True)
    return (peak + np.log(total))[:, 0], e / total


def _check(sim: Similarity, mask: np.ndarray) -> int:
    n = sim.S.shape[0]
    if sim.S.shape != (n, n) or mask.shape != (n, n):
        raise InputError(f"similarity {sim.S.shape} and mask {mask.shape} must be matching square matrices")
    counts = mask.sum(axis=1)
    if n == 0 or counts.min() != counts.max() or counts[0] < 1:
        raise InputError("mask must give every anchor the same, nonzero number of positives")
    return int(counts[0])


def _chain(G: np.ndarray, sim: Similarity) -> np.ndarray:
    # dL/dZ for S = Z Z^T / tau
    return (G + G.T) @ sim.Z / sim.tau


def loss_geometric(sim: Similarity, mask: np.ndarray) -> LossOutput:
    npos = _check(sim, mask)
    S = sim.S
    rows = S.shape[0]
    others = ~np.eye(rows, dtype=bool)
    lse, q = _logsumexp_rows(S, others)
    pos_mean = np.where(mask, S, 0.0).sum(axis=1) / npos
    value = -float(np.mean(pos_mean - lse))
    G = -(mask / npos - q) / rows
    return LossOutput(value=value, grad_Z=_chain(G, sim))


def loss_arithmetic(sim: Similarity, mask: np.ndarray) -> LossOutput:
    npos = _check(sim, mask)
    S = sim.S
    rows = S.shape[0]
    others = ~np.eye(rows, dtype=bool)
    lse_all, q = _logsumexp_rows(S, others)
    lse_pos, r = _logsumexp_rows(S, mask)
    value = float(np.mean(math.log(npos) + lse_all - lse_pos))
    G = (q - r) / rows
    return LossOutput(value=value, grad_Z=_chain(G, sim))


def poly_window_loss(Z: np.ndarray, N: int, M: int, kind: str = "geometric", tau: float = DEFAULT_TAU) -> LossOutput:
    """Similarity, mask and the selected aggregation in one call."""
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}; expected one of {', '.join(LOSS_KINDS)}")
    sim = similarity(Z, tau)
    if sim.S.shape[0] != N * M:
        raise InputError(f"expected {N * M} embedding rows for N={N}, M={M}, got {sim.S.shape[0]}")
    mask = build_mask(N, M)
    return loss_geometric(sim, mask) if kind == "geometric" else loss_arithmetic(sim, mask)


def _raw_loss(Z: np.ndarray, N: int, M: int, kind: str, tau: float) -> LossOutput:
    # No unit-norm check: finite differences step off the sphere.
    sim = Similarity(S=(Z @ Z.T) / tau, tau=tau, Z=Z)
    mask = build_mask(N, M)
    return loss_geometric(sim, mask) if kind == "geometric" else loss_arithmetic(sim, mask)


# ---------------------------------------------------------------------------
# Brute-force reference
# ---------------------------------------------------------------------------


def oracle_loss(Z, tau: float, N: int, M: int, kind: str, allow_large: bool = False) -> float:
    """Per-pair evaluation of the poly-window loss.

    Computes ``p_ab`` for every ordered pair with explicit Python loops and
    aggregates each anchor's positives by the geometric mean (product then
    root) or the arithmetic mean before taking the log.  The only numerical
    safeguard is subtracting the row maximum inside ``p_ab``.
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    n = N * M
    if n > ORACLE_MAX_ROWS and not allow_large:
        raise GuardError(f"oracle limited to N*M <= {ORACLE_MAX_ROWS}, got {n}")
    rows = [[float(v) for v in row] for row in np.asarray(Z, dtype=np.float64)]
    if len(rows) != n:
        raise InputError(f"expected {n} rows, got {len(rows)}")
    S = [[sum(x * y for x, y in zip(rows[a], rows[b])) / tau for b in range(n)] for a in range(n)]
    total = 0.0
    for a in range(n):
        peak = max(S[a][c] for c in range(n) if c != a)
        denom = sum(math.exp(S[a][c] - peak) for c in range(n) if c != a)
        p = [math.exp(S[a][b] - peak) / denom if b != a else 0.0 for b in range(n)]
        positives = [p[b] for b in range(n) if b != a and b // M == a // M]
        if kind == "geometric":
            prod = 1.0
            for v in positives:
                prod *= v
            stat = prod ** (1.0 / (M - 1))
        else:
            stat = sum(positives) / (M - 1)
        total += math.log(stat)
    return -total / n


# ---------------------------------------------------------------------------
# Gradient check and timing
# ---------------------------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the larger gradient's max magnitude."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_grad(Z: np.ndarray, N: int, M: int, kind: str, tau: float, h: float = 1e-5) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    grad = np.zeros_like(Z)
    for idx in np.ndindex(*Z.shape):
        zp, zm = Z.copy(), Z.copy()
        zp[idx] += h
        zm[idx] -= h
        grad[idx] = (_raw_loss(zp, N, M, kind, tau).value - _raw_loss(zm, N, M, kind, tau).value) / (2 * h)
    return grad


def loss_grad_check(Z, tau: float, N: int, M: int, kind: str, h: float = 1e-5) -> float:
    """Analytic ``grad_Z`` against central differences; returns the max relative error."""
    Z = np.asarray(Z, dtype=np.float64)
    if N * M > 32:
        raise GuardError(f"gradient check limited to N*M <= 32, got {N * M}")
    analytic = _raw_loss(Z, N, M, kind, tau).grad_Z
    return relative_error(analytic, numeric_grad(Z, N, M, kind, tau, h))


def random_embeddings(rng: np.random.Generator, rows: int, d: int) -> np.ndarray:
    Z = rng.standard_normal((rows, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def bench_positive_aggregation(
    N: int, M: int, d: int, repeats: int = 5, kind: str = "geometric", tau: float = DEFAULT_TAU, seed: int = 0
) -> dict:
    """Median wall-clock of the matrix path versus the per-pair oracle.

    Outputs of both paths are compared before timing.  Returns a report
    with ``fast_path_ns``, ``oracle_path_ns`` and the spread of each.
    """
    from threadpoolctl import threadpool_limits

    rng = np.random.default_rng(seed)
    Z = random_embeddings(rng, N * M, d)
    fast = poly_window_loss(Z, N, M, kind, tau).value
    slow = oracle_loss(Z, tau, N, M, kind, allow_large=True)
    if abs(fast - slow) > 1e-9:
        raise AssertionError(f"fast path {fast!r} and oracle {slow!r} disagree before timing")

    def timed(fn) -> list[int]:
        out = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            fn()
            out.append(time.perf_counter_ns() - t0)
        return out

    with threadpool_limits(limits=1):
        fast_ns = timed(lambda: poly_window_loss(Z, N, M, kind, tau))
        oracle_ns = timed(lambda: oracle_loss(Z, tau, N, M, kind, allow_large=True))

    def spread(xs: list[int]) -> float:
        # median absolute deviation, the stated noise bound for the median
        med = statistics.median(xs)
        return float(statistics.median(abs(x - med) for x in xs))

    return {
        "N": N,
        "M": M,
        "d": d,
        "kind": kind,
        "repeats": repeats,
        "fast_path_ns": float(statistics.median(fast_ns)),
        "oracle_path_ns": float(statistics.median(oracle_ns)),
        "fast_path_mad_ns": spread(fast_ns),
        "oracle_path_mad_ns": spread(oracle_ns),
        "abs_diff": abs(fast - slow),
    }


def bench_rows(report: dict) -> list[dict]:
    """Flatten a benchmark report into ``{N, M, d, path, median_ns}`` rows."""
    return [
        {"N": report["N"], "M": report["M"], "d": report["d"], "path": path, "median_ns": report[f"{path}_path_ns"]}
        for path in ("fast", "oracle")
    ]
