"""Self-check suites behind ``polywin verify``.

Each suite returns a :class:`SuiteResult`; a suite passes when its measured
quantity is within the stated bound.  Loss functions are looked up on the
module at call time so that a patched implementation is what gets checked.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from . import evaluate, optim, sampler
from . import loss as losses
from .encoder import Encoder, l2_normalize, preset
from .errors import FeasibilityWarning


@dataclass
class SuiteResult:
    group: str
    name: str
    passed: bool
    measured: float
    bound: float
    seconds: float = 0.0

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.group:<8} {self.name:<28} measured={self.measured:.3g} bound={self.bound:.3g} ({self.seconds:.1f}s)"


# ---------------------------------------------------------------------------
# Reference implementations used only for checking
# ---------------------------------------------------------------------------


def reference_infonce(Z: np.ndarray, tau: float) -> float:
    """Two-view InfoNCE in the usual (view-major) layout via cross-entropy.

    ``Z`` uses the project row order (sample-major, two windows per sample);
    it is rearranged to ``[view0 rows; view1 rows]`` and scored with
    ``torch.nn.functional.cross_entropy`` in float64.
    """
    z = torch.as_tensor(Z, dtype=torch.float64)
    n = z.shape[0] // 2
    views = torch.cat([z[0::2], z[1::2]])
    logits = views @ views.T / tau
    logits.fill_diagonal_(float("-inf"))
    target = torch.cat([torch.arange(n, 2 * n), torch.arange(0, n)])
    return float(F.cross_entropy(logits, target))


def brute_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def brute_prf(scores: np.ndarray, targets: np.ndarray, threshold: float) -> tuple[float, float, float]:
    ps, rs, fs = [], [], []
    for k in range(targets.shape[1]):
        tp = fp = fn = 0
        for s, y in zip(scores[:, k], targets[:, k]):
            hit = s >= threshold
            tp += hit and y == 1
            fp += hit and y == 0
            fn += (not hit) and y == 1
        ps.append(tp / (tp + fp) if tp + fp else 0.0)
        rs.append(tp / (tp + fn) if tp + fn else 0.0)
        fs.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)
    return float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs))


def encoder_grad_check(
    N: int = 2,
    M: int = 2,
    L: int = 16,
    seed: int = 1,
    h: float = 1e-4,
    kind: str = "geometric",
    tau: float = 0.5,
    max_entries: int | None = None,
    names: tuple[str, ...] | None = None,
) -> dict[str, float]:
    """Per-tensor relative error of encoder parameter gradients, end to end.

    The objective is the poly-window loss of the normalized projections of
    ``N*M`` random crops; the analytic side is ``Encoder.backward`` fed with
    the loss gradient, the numeric side central differences in float64.
    ``max_entries`` limits how many entries of each tensor are perturbed.
    The default seed gives an input where no ±h step crosses a ReLU or
    max-pool kink; at such crossings central differences are meaningless.
    """
    cfg = preset("tiny-1d-64/32", in_channels=2)
    enc = Encoder(cfg, seed=seed, dtype=torch.float64)
    enc.train()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((N * M, cfg.in_channels, L))

    def objective() -> float:
        with torch.no_grad():
            z = l2_normalize(enc.project(enc.features(torch.as_tensor(x))).numpy())
        return losses._raw_loss(z, N, M, kind, tau).value

    z = enc.embed(x)
    out = losses._raw_loss(z, N, M, kind, tau)
    grads = {k: v.detach().numpy().copy() for k, v in enc.backward(out.grad_Z).items() if k != "input"}
    errors = {}
    for name, p in enc.named_parameters():
        if names is not None and name not in names:
            continue
        flat = p.data.view(-1)
        idx = np.arange(flat.numel())
        if max_entries is not None and flat.numel() > max_entries:
            idx = rng.choice(flat.numel(), size=max_entries, replace=False)
        analytic = grads[name].reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = float(flat[i])
            flat[i] = orig + h
            fp = objective()
            flat[i] = orig - h
            fm = objective()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
        errors[name] = losses.relative_error(analytic, numeric)
    return errors


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

GRID_N = (2, 3, 4)
GRID_M = (2, 3, 4)
GRID_D = (2, 8)
GRID_TAU = (0.05, 0.1, 0.5, 1.0)


def _suite(group: str, name: str, bound: float, higher_is_worse: bool = True):
    def wrap(fn: Callable[[], float]) -> Callable[[], SuiteResult]:
        def run(**kwargs) -> SuiteResult:
            t0 = time.monotonic()
            measured = float(fn(**kwargs))
            ok = measured <= bound if higher_is_worse else measured >= bound
            return SuiteResult(group, name, bool(ok and math.isfinite(measured)), measured, bound, time.monotonic() - t0)

        run.group = group  # type: ignore[attr-defined]
        run.suite_name = name  # type: ignore[attr-defined]
        return run

    return wrap


@_suite("loss", "oracle-equivalence", 1e-9)
def suite_oracle(instances: int = 100) -> float:
    rng = np.random.default_rng(1)
    worst = 0.0
    for N in GRID_N:
        for M in GRID_M:
            for d in GRID_D:
                for tau in GRID_TAU:
                    for _ in range(instances):
                        Z = losses.random_embeddings(rng, N * M, d)
                        for kind in losses.LOSS_KINDS:
                            fast = losses.poly_window_loss(Z, N, M, kind, tau).value
                            worst = max(worst, abs(fast - losses.oracle_loss(Z, tau, N, M, kind)))
    return worst


@_suite("loss", "two-view-reduction", 1e-12)
def suite_m2(instances: int = 1000) -> float:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(instances):
        N = int(rng.integers(2, 9))
        tau = float(rng.choice(GRID_TAU))
        Z = losses.random_embeddings(rng, 2 * N, int(rng.integers(2, 17)))
        ref = reference_infonce(Z, tau)
        for kind in losses.LOSS_KINDS:
            worst = max(worst, abs(losses.poly_window_loss(Z, N, 2, kind, tau).value - ref))
    return worst


@_suite("loss", "am-gm-ordering", 1e-12)
def suite_amgm(instances: int = 10000) -> float:
    """Largest amount by which the arithmetic loss exceeds the geometric one."""
    rng = np.random.default_rng(3)
    worst = -math.inf
    for _ in range(instances):
        N, M = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        tau = float(rng.choice(GRID_TAU))
        Z = losses.random_embeddings(rng, N * M, int(rng.integers(2, 9)))
        geo = losses.poly_window_loss(Z, N, M, "geometric", tau).value
        ari = losses.poly_window_loss(Z, N, M, "arithmetic", tau).value
        worst = max(worst, ari - geo)
    return max(worst, 0.0)


@_suite("loss", "degenerate-value", 1e-9)
def suite_degenerate() -> float:
    worst = 0.0
    for N in GRID_N:
        for M in GRID_M:
            for tau in GRID_TAU:
                Z = np.tile(losses.random_embeddings(np.random.default_rng(N * 10 + M), 1, 8), (N * M, 1))
                for kind in losses.LOSS_KINDS:
                    worst = max(worst, abs(losses.poly_window_loss(Z, N, M, kind, tau).value - math.log(N * M - 1)))
    return worst


@_suite("loss", "loss-gradient", 1e-4)
def suite_loss_grad(instances: int = 1) -> float:
    rng = np.random.default_rng(4)
    worst = 0.0
    for N in GRID_N:
        for M in GRID_M:
            for d in GRID_D:
                for tau in GRID_TAU:
                    for _ in range(instances):
                        Z = losses.random_embeddings(rng, N * M, d)
                        for kind in losses.LOSS_KINDS:
                            worst = max(worst, losses.loss_grad_check(Z, tau, N, M, kind))
    return worst


@_suite("encoder", "encoder-gradient", 1e-3)
def suite_encoder_grad(max_entries: int | None = 12) -> float:
    return max(encoder_grad_check(max_entries=max_entries).values())


@_suite("metrics", "probe-loss-gradient", 1e-6)
def suite_probe_grad() -> float:
    rng = np.random.default_rng(5)
    worst = 0.0
    h = 1e-5
    for _ in range(5):
        x = rng.normal(scale=2.0, size=(6, 4))
        y = (rng.random((6, 4)) < 0.5).astype(int)
        _, g = evaluate.probe_loss(x, y)
        num = np.zeros_like(x)
        for i in np.ndindex(*x.shape):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            num[i] = (evaluate.probe_loss(xp, y)[0] - evaluate.probe_loss(xm, y)[0]) / (2 * h)
        worst = max(worst, losses.relative_error(g, num))
    return worst


@_suite("metrics", "auroc-vs-pair-count", 0.0)
def suite_auroc(cases: int = 200) -> float:
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 12))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        s = rng.integers(0, 5, size=n) / 4.0  # coarse grid forces ties
        worst = max(worst, abs(evaluate.auroc_macro(s[:, None], y[:, None]) - brute_auroc(s, y)))
    return worst


@_suite("metrics", "prf-vs-confusion", 0.0)
def suite_prf(cases: int = 50) -> float:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(cases):
        n, k = int(rng.integers(1, 10)), int(rng.integers(1, 4))
        s = rng.random((n, k))
        y = rng.integers(0, 2, size=(n, k))
        got = evaluate.prf_at_threshold(s, y, 0.5)
        ref = brute_prf(s, y, 0.5)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, ref)))
    return worst


@_suite("sampler", "window-constraints", 0)
def suite_sampler(draws: int = 1000) -> float:
    """Violations of bounds or overlap cap over feasible grid configurations."""
    rng = np.random.default_rng(8)
    violations = 0
    T = 1000
    for m in (2, 4, 6, 8):
        for L in (32, 64, 128, 256):
            for ov in (0.0, 0.25, 0.5, 0.75):
                cfg = sampler.CropConfig(m, L, ov)
                if not sampler.feasible(T, cfg):
                    with warnings.catch_warnings(record=True) as caught:
                        warnings.simplefilter("always")
                        s = sampler.sample_windows(rng, T, cfg)
                    if not any(issubclass(w.category, FeasibilityWarning) for w in caught):
                        violations += 1
                    if not np.array_equal(s, sampler.even_starts(T, cfg)):
                        violations += 1
                    continue
                cap = cfg.overlap_cap
                for _ in range(draws):
                    s = sampler.sample_windows(rng, T, cfg)
                    if s.min() < 0 or s.max() > T - L:
                        violations += 1
                    ov_mat = sampler.overlaps(s, L)
                    np.fill_diagonal(ov_mat, 0)
                    violations += int(ov_mat.max() > cap)
    return violations


@_suite("optim", "schedule-and-trace", 1e-12)
def suite_optim() -> float:
    cfg = optim.OptimConfig(peak_lr=0.01, warmup_steps=10, final_lr=1e-6, total_steps=100, weight_decay=0.1)
    err = abs(optim.lr_at(10, cfg) - 0.01) + abs(optim.lr_at(100, cfg) - 1e-6) + abs(optim.lr_at(4, cfg) - 0.005)
    # two-step scalar trace, executed by hand
    p, g1, g2, lr = 1.0, 0.5, -0.25, 0.01
    b1, b2, eps, wd = cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay
    m = (1 - b1) * g1
    v = (1 - b2) * g1 * g1
    p1 = p - lr * ((m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps) + wd * p)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 * g2
    p2 = p1 - lr * ((m / (1 - b1**2)) / (math.sqrt(v / (1 - b2**2)) + eps) + wd * p1)
    params = {"w": np.array([p])}
    state = optim.OptimState()
    optim.step(params, {"w": np.array([g1])}, state, cfg, lr)
    optim.step(params, {"w": np.array([g2])}, state, cfg, lr)
    return err + abs(float(params["w"][0]) - p2)


SUITES = [
    suite_oracle,
    suite_m2,
    suite_amgm,
    suite_degenerate,
    suite_loss_grad,
    suite_encoder_grad,
    suite_probe_grad,
    suite_auroc,
    suite_prf,
    suite_sampler,
    suite_optim,
]
GROUPS = sorted({s.group for s in SUITES})


def run_suites(only: list[str] | None = None) -> list[SuiteResult]:
    if only:
        unknown = set(only) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown suite group(s) {sorted(unknown)}; choose from {GROUPS}")
    return [s() for s in SUITES if not only or s.group in only]
