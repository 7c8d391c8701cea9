"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test records a one-line PASS/FAIL summary that is printed at the end of
the pytest run (see ``conftest.py``).  Run this file alone with
``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import json
import math
import statistics
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
import torch

from polywin import cli, verify
from polywin import loss as losses
from polywin.data import SyntheticSpec, generate_synthetic, split
from polywin.encoder import Encoder, forward_features, preset
from polywin.errors import FeasibilityWarning
from polywin.evaluate import ProbeConfig, metric_report, train_probe
from polywin.presets import PUBLISHED_AXES, PUBLISHED_SEEDS
from polywin.pretrain import PretrainConfig, pretrain
from polywin.sampler import CropConfig, even_starts, feasible, sample_windows

REPO = Path(__file__).resolve().parents[1]
ACCEPTANCE_KEY = pytest.StashKey[list]()
BEST_ROW_CMD = "pretrain --views 8 --crop 64 --overlap 0.5 --epochs 32 --batch 256 --loss geometric"


@pytest.fixture(autouse=True)
def _one_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(prev)


@pytest.fixture
def report(request):
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def _record(n: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {n:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return _record


# --------------------------------------------------------------------------
# 1-4: loss identities
# --------------------------------------------------------------------------


def test_c01_oracle_equivalence(report):
    res = verify.suite_oracle(instances=100)
    ok = res.passed and res.seconds < 30.0
    assert report(
        1,
        "oracle equivalence",
        ok,
        f"max |fast-oracle| = {res.measured:.2e} (<= 1e-9) over 7200 instances x 2 kinds in {res.seconds:.1f}s (< 30s)",
    )


def test_c02_two_view_reduction(report):
    res = verify.suite_m2(instances=1000)
    assert report(2, "M=2 reduction", res.passed, f"max |loss - InfoNCE| = {res.measured:.2e} (<= 1e-12) on 1000 instances")


def test_c03_am_gm_ordering(report):
    res = verify.suite_amgm(instances=10_000)
    assert report(3, "AM-GM ordering", res.passed, f"max (arith - geo) = {res.measured:.2e} (<= 1e-12) on 10000 instances")


def test_c04_degenerate_value(report):
    res = verify.suite_degenerate()
    assert report(4, "degenerate value", res.passed, f"max |loss - log(NM-1)| = {res.measured:.2e} (<= 1e-9)")


# --------------------------------------------------------------------------
# 5: gradients
# --------------------------------------------------------------------------


def test_c05_gradient_checks(report):
    loss_err = verify.suite_loss_grad(instances=1).measured
    enc_errs = verify.encoder_grad_check(max_entries=None)  # every parameter entry
    enc_err = max(enc_errs.values())
    probe_err = verify.suite_probe_grad().measured
    ok = loss_err <= 1e-4 and enc_err <= 1e-3 and probe_err <= 1e-6
    worst_tensor = max(enc_errs, key=enc_errs.get)
    assert report(
        5,
        "gradient checks",
        ok,
        f"loss {loss_err:.1e} (<= 1e-4), encoder {enc_err:.1e} at {worst_tensor} over "
        f"{sum(p.numel() for p in Encoder(preset('tiny-1d-64/32', 2)).parameters())} entries (<= 1e-3), "
        f"probe {probe_err:.1e} (<= 1e-6)",
    )


# --------------------------------------------------------------------------
# 6: sampler
# --------------------------------------------------------------------------


def _max_pairwise_overlap(starts: np.ndarray, L: int) -> np.ndarray:
    a0 = starts[:, :, None]
    b0 = starts[:, None, :]
    inter = np.minimum(a0 + L, b0 + L) - np.maximum(a0, b0)
    m = starts.shape[1]
    inter[:, np.arange(m), np.arange(m)] = 0
    return np.clip(inter, 0, None).max(axis=(1, 2))


def test_c06_sampler(report):
    T, draws = 1000, 10_000
    rng = np.random.default_rng(2024)
    violations = n_feasible = n_infeasible = bad_infeasible = 0
    for m in PUBLISHED_AXES["views"]:
        for L in PUBLISHED_AXES["crop"]:
            for ov in PUBLISHED_AXES["overlap"]:
                cfg = CropConfig(m, L, ov)
                if not feasible(T, cfg):
                    n_infeasible += 1
                    with warnings.catch_warnings(record=True) as caught:
                        warnings.simplefilter("always")
                        s = sample_windows(rng, T, cfg)
                    warned = any(issubclass(w.category, FeasibilityWarning) for w in caught)
                    spaced = np.array_equal(s, even_starts(T, cfg)) and s[0] == 0 and s[-1] == T - L
                    bad_infeasible += not (warned and spaced)
                    continue
                n_feasible += 1
                S = np.stack([sample_windows(rng, T, cfg) for _ in range(draws)])
                violations += int(((S < 0) | (S > T - L)).any(axis=1).sum())
                violations += int((_max_pairwise_overlap(S, L) > cfg.overlap_cap).sum())
    ok = violations == 0 and bad_infeasible == 0
    assert report(
        6,
        "sampler",
        ok,
        f"{violations} violations in {n_feasible} feasible configs x {draws} draws (T={T}); "
        f"{n_infeasible - bad_infeasible}/{n_infeasible} infeasible configs gave even starts + warning",
    )


# --------------------------------------------------------------------------
# 7: metrics
# --------------------------------------------------------------------------


def test_c07_metrics(report):
    auroc = verify.suite_auroc(cases=200)
    prf = verify.suite_prf(cases=50)
    ok = auroc.passed and prf.passed
    assert report(7, "metrics", ok, f"AUROC max diff {auroc.measured} on 200 cases, P/R/F1 max diff {prf.measured} on 50 cases (exact)")


# --------------------------------------------------------------------------
# 8-9: desk-scale learning
# --------------------------------------------------------------------------

DESK_SPEC = SyntheticSpec(num_records=2000, channels=4, timepoints=500, num_classes=3, seed=7)


@pytest.fixture(scope="module")
def desk_splits():
    return split(generate_synthetic(DESK_SPEC))


def _probe_auroc(encoder, splits, which: int = 2, probe_epochs: int = 90, seed: int = 0) -> float:
    tr, va, te = splits
    feats = [forward_features(encoder, s.signals) for s in (tr, va, te)]
    res = train_probe(feats[0], tr.labels, feats[1], va.labels, ProbeConfig(epochs=probe_epochs, seed=seed))
    target = (tr, va, te)[which]
    return metric_report(res.probe.predict_proba(feats[which]), target.labels).auroc


def _chance_baseline(splits, dim: int, seeds=range(5)) -> float:
    """Probe AUROC on label-independent Gaussian features of the encoder's width."""
    tr, va, te = splits
    out = []
    for s in seeds:
        rng = np.random.default_rng(1000 + s)
        f = [rng.standard_normal((len(x), dim)) for x in (tr, va, te)]
        res = train_probe(f[0], tr.labels, f[1], va.labels, ProbeConfig(seed=s))
        out.append(metric_report(res.probe.predict_proba(f[2]), te.labels).auroc)
    return float(np.mean(out))


def test_c08_desk_scale_learning(report, desk_splits):
    t0 = time.monotonic()
    cfg = PretrainConfig(
        crop=CropConfig(num_windows=4, crop_len=64, max_overlap=0.0),
        encoder=preset("tiny-1d-64/32"),
        batch_size=64,
        epochs=20,
        seed=0,
    )
    res = pretrain(desk_splits[0], cfg)
    auroc = _probe_auroc(res.encoder, desk_splits)
    elapsed = time.monotonic() - t0
    chance = _chance_baseline(desk_splits, cfg.encoder.embed_dim)
    init = _probe_auroc(Encoder(cfg.encoder, seed=0), desk_splits)
    ok = auroc >= 0.80 and auroc >= chance + 0.15 and elapsed < 600
    assert report(
        8,
        "desk-scale learning",
        ok,
        f"test macro AUROC {auroc:.3f} (>= 0.80), chance-feature baseline {chance:.3f} (+0.15 -> {chance + 0.15:.3f}), "
        f"random-init encoder {init:.3f}, pretrain+probe {elapsed:.0f}s (< 600s)",
    )


THRESHOLD = 0.75
MAX_EPOCHS = 5


def _epochs_to_reach(splits, M: int, seed: int) -> tuple[float, list[float]]:
    curve: list[float] = []

    def on_epoch(epoch, encoder):
        curve.append(_probe_auroc(encoder, splits, which=1, seed=seed))

    cfg = PretrainConfig(
        crop=CropConfig(num_windows=M, crop_len=64, max_overlap=0.5),
        encoder=preset("tiny-1d-64/32"),
        batch_size=64,
        epochs=MAX_EPOCHS,
        seed=seed,
    )
    pretrain(splits[0], cfg, on_epoch_end=on_epoch)
    hit = next((i + 1 for i, a in enumerate(curve) if a >= THRESHOLD), math.inf)
    return hit, curve


def _epoch_seconds(splits, M: int, epochs: int = 3) -> float:
    cfg = PretrainConfig(
        crop=CropConfig(num_windows=M, crop_len=64, max_overlap=0.5),
        encoder=preset("tiny-1d-64/32"),
        batch_size=64,
        epochs=epochs,
        seed=0,
    )
    # min over epochs: least disturbed by other load on the machine
    return min(pretrain(splits[0], cfg).epoch_seconds)


def test_c09_view_multiplicity_efficiency(report, desk_splits):
    hits = {2: [], 8: []}
    curves = {2: [], 8: []}
    for seed in PUBLISHED_SEEDS:
        for M in (2, 8):
            h, c = _epochs_to_reach(desk_splits, M, seed)
            hits[M].append(h)
            curves[M].append(c)
    med = {M: statistics.median(v) for M, v in hits.items()}
    mean_curve = {M: np.mean(curves[M], axis=0) for M in curves}
    secs = {M: _epoch_seconds(desk_splits, M) for M in (2, 4, 6, 8)}
    order = [secs[M] for M in (2, 4, 6, 8)]
    increasing = all(b > a for a, b in zip(order, order[1:]))
    ok = med[8] <= med[2] and increasing
    fmt = lambda xs: "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"  # noqa: E731
    assert report(
        9,
        "view-multiplicity efficiency",
        ok,
        f"median epochs to val AUROC {THRESHOLD}: M=8 {med[8]} vs M=2 {med[2]} (per seed {hits[8]} vs {hits[2]}); "
        f"mean val AUROC per epoch M=8 {fmt(mean_curve[8])} vs M=2 {fmt(mean_curve[2])}; "
        f"epoch seconds M=2,4,6,8: {fmt(order)} (strictly increasing: {increasing})",
    )


# --------------------------------------------------------------------------
# 10: complexity benchmark
# --------------------------------------------------------------------------


def test_c10_complexity_benchmark(report):
    r2 = losses.bench_positive_aggregation(8, 2, 64, repeats=7)
    r8 = losses.bench_positive_aggregation(8, 8, 64, repeats=7)
    oracle_ratio = r8["oracle_path_ns"] / r2["oracle_path_ns"]
    fast_ratio = r8["fast_path_ns"] / r2["fast_path_ns"]
    ok = oracle_ratio >= 2 * fast_ratio
    assert report(
        10,
        "complexity benchmark",
        ok,
        f"oracle t(M=8)/t(M=2) = {oracle_ratio:.2f}, fast = {fast_ratio:.2f}, factor {oracle_ratio / fast_ratio:.2f} (>= 2)",
    )


# --------------------------------------------------------------------------
# 11: documented full-scale invocation
# --------------------------------------------------------------------------


def test_c11_full_scale_invocation_documented(report, capsys):
    readme = (REPO / "README.md").read_text(encoding="utf-8")
    documented = BEST_ROW_CMD in readme and "resnet18-1d-512/128" in readme and "not reproducible" in readme.lower()
    code = cli.main(BEST_ROW_CMD.split() + ["--preset", "resnet18-1d-512/128", "--dry-run"])
    echo = json.loads(capsys.readouterr().out)["config"]
    row = (echo["views"], echo["batch"], echo["loss"], echo["crop"], echo["overlap"], echo["epochs"])
    ok = documented and code == 0 and row == (8, 256, "geometric", 64, 0.5, 32) and echo["preset"] == "resnet18-1d-512/128"
    assert report(
        11,
        "full-scale invocation",
        ok,
        f"README documents the command, preset and the non-reproducibility note: {documented}; dry-run echo {row} on {echo['preset']}",
    )


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
