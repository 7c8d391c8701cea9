"""Command-line entry point: ``polywin {synth,pretrain,eval,verify,grid,bench}``.

Machine-readable output (JSON, CSV) goes to stdout and files; progress goes
to stderr.  Any flag can also be given in a JSON file passed with
``--config``; keys are the flag names with dashes replaced by underscores,
and flags on the command line always win over the file.

Exit codes: 0 success, 1 usage, 2 data or format problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .data import SyntheticSpec, generate_synthetic, load_dir, save_dir, split
from .encoder import PRESETS, forward_features, load_checkpoint, preset, save_checkpoint
from .errors import DataError, FeasibilityWarning, FormatError, PolywinError
from .evaluate import ProbeConfig, metric_report, train_probe
from .loss import LOSS_KINDS
from .optim import OptimConfig
from .presets import PUBLISHED_AXES, PUBLISHED_SEEDS, PROBE_EPOCHS, REPORTED_ROWS, full_grid_size, row_echo, table1_config
from .pretrain import PretrainConfig, pretrain
from .sampler import CropConfig

log = logging.getLogger("polywin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to exit 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _loss_list(text: str) -> list[str]:
    kinds = [v.strip() for v in text.split(",") if v.strip()]
    bad = [k for k in kinds if k not in LOSS_KINDS]
    if bad:
        raise argparse.ArgumentTypeError(f"invalid loss kind(s) {bad}; choose from {', '.join(LOSS_KINDS)}")
    return kinds


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag values; command-line flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only on stderr")


def _add_pretrain_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pre-training")
    g.add_argument("--views", type=int, default=2, help="windows per record (M >= 2)")
    g.add_argument("--crop", type=int, default=64, help="window length in samples")
    g.add_argument("--overlap", type=float, default=0.0, help="maximum pairwise overlap fraction in [0, 1)")
    g.add_argument("--epochs", type=int, default=32)
    g.add_argument("--batch", type=int, default=256, help="records per step (N)")
    g.add_argument("--loss", choices=LOSS_KINDS, default="geometric")
    g.add_argument("--tau", type=float, default=0.1, help="temperature")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=sorted(PRESETS), default="tiny-1d-64/32", help="encoder preset")
    g.add_argument("--lr", type=float, default=0.01, help="peak learning rate")
    g.add_argument("--weight-decay", type=float, default=1e-4)
    g.add_argument("--warmup", type=int, default=10, help="warmup steps")
    g.add_argument("--final-lr", type=float, default=1e-6)


def _add_synth_flags(p: argparse.ArgumentParser, prefix: str = "") -> None:
    d = SyntheticSpec()
    p.add_argument(f"--{prefix}records", type=int, default=d.num_records)
    p.add_argument(f"--{prefix}channels", type=int, default=d.channels)
    p.add_argument(f"--{prefix}timepoints", type=int, default=d.timepoints)
    p.add_argument(f"--{prefix}classes", type=int, default=d.num_classes)
    p.add_argument(f"--{prefix}noise-std", type=float, default=d.noise_std)
    p.add_argument(f"--{prefix}wander-std", type=float, default=d.wander_std)
    p.add_argument(f"--{prefix}beat-rate", type=_float_list, default=list(d.beat_rate_range),
                   help="min,max pulse rate per record")


def build_parser() -> Parser:
    parser = Parser(prog="polywin", description="Multi-window contrastive pre-training toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("synth", help="write a synthetic multi-label dataset")
    _add_common(p)
    _add_synth_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("pretrain", help="contrastive pre-training; writes checkpoint and loss trace")
    _add_common(p)
    p.add_argument("--data", help="dataset directory (from `synth` or the same format)")
    p.add_argument("--table1", choices=sorted(REPORTED_ROWS),
                   help="start from a reported best-row configuration on the full-size encoder")
    _add_pretrain_flags(p)
    p.add_argument("--out", default="pretrain-out", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="print the resolved configuration and exit")

    p = sub.add_parser("eval", help="frozen-feature linear probe on a checkpoint")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", type=int, default=PROBE_EPOCHS, help="probe epochs")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01, help="probe peak learning rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the report JSON here as well")

    p = sub.add_parser("verify", help="run the self-check suites")
    _add_common(p)
    p.add_argument("--only", type=lambda s: [v for v in s.split(",") if v],
                   help="comma-separated suite groups: encoder,loss,metrics,optim,sampler")

    p = sub.add_parser("grid", help="run a grid of experiments with resumable result records")
    _add_common(p)
    src = p.add_argument_group("data source (default: synthetic)")
    src.add_argument("--data", help="dataset directory; omit to use a generated synthetic set")
    _add_synth_flags(src, prefix="synth-")
    src.add_argument("--synth-seed", type=int, default=0)
    _add_pretrain_flags(p)
    ax = p.add_argument_group("grid axes (comma-separated; unset axes use the single pre-training value)")
    ax.add_argument("--views-list", dest="views_axis", type=_int_list)
    ax.add_argument("--crops", type=_int_list)
    ax.add_argument("--overlaps", type=_float_list)
    ax.add_argument("--epochs-list", dest="epochs_axis", type=_int_list)
    ax.add_argument("--batches", type=_int_list)
    ax.add_argument("--losses", type=_loss_list)
    ax.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--paper-grid", action="store_true", help="use the full published ablation axes and seeds")
    p.add_argument("--yes", action="store_true", help="do not ask for confirmation")
    p.add_argument("--probe-epochs", type=int, default=PROBE_EPOCHS)
    p.add_argument("--tag", default="default")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--results", help="results root (default: $POLYWIN_RESULTS_DIR or ./results)")
    p.add_argument("--no-resume", action="store_true", help="rerun configurations that already have records")

    p = sub.add_parser("bench", help="time the positive-aggregation paths against M")
    _add_common(p)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--views", type=_int_list, default=[2, 4, 6, 8])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--loss", choices=LOSS_KINDS, default="geometric")
    p.add_argument("--seed", type=int, default=0)
    return parser


# Grid's --views and --epochs accept lists too; split the two meanings early.
_GRID_ALIASES = {"--views": "--views-list", "--epochs": "--epochs-list"}


def _grid_argv(argv: list[str]) -> list[str]:
    out = []
    for tok in argv:
        name, eq, val = tok.partition("=")
        if name in _GRID_ALIASES:
            out.append(_GRID_ALIASES[name] + eq + val)
        else:
            out.append(tok)
    return out


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    if argv and argv[0] == "grid":
        argv = ["grid"] + _grid_argv(argv[1:])
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise FormatError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(overrides, dict):
            raise FormatError("config file must hold a JSON object")
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            raise UsageError(f"unknown key(s) in config file: {sorted(unknown)}")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
        args._config_keys = set(overrides)
    return args


def _setup_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s", force=True)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    sys.stdout.flush()


def _pretrain_config(args, in_channels: int) -> PretrainConfig:
    explicit = set(getattr(args, "_explicit", ()))
    if getattr(args, "table1", None):
        base = table1_config(args.table1, in_channels=in_channels, seed=args.seed)
        # explicit flags still override the preset row
        crop = CropConfig(
            num_windows=args.views if "views" in explicit else base.crop.num_windows,
            crop_len=args.crop if "crop" in explicit else base.crop.crop_len,
            max_overlap=args.overlap if "overlap" in explicit else base.crop.max_overlap,
        )
        return replace(
            base,
            crop=crop,
            encoder=preset(args.preset, in_channels) if "preset" in explicit else base.encoder,
            epochs=args.epochs if "epochs" in explicit else base.epochs,
            batch_size=args.batch if "batch" in explicit else base.batch_size,
            loss_kind=args.loss if "loss" in explicit else base.loss_kind,
            tau=args.tau,
            optim=OptimConfig(peak_lr=args.lr, weight_decay=args.weight_decay, warmup_steps=args.warmup,
                              final_lr=args.final_lr),
        )
    return PretrainConfig(
        crop=CropConfig(num_windows=args.views, crop_len=args.crop, max_overlap=args.overlap),
        encoder=preset(args.preset, in_channels),
        optim=OptimConfig(peak_lr=args.lr, weight_decay=args.weight_decay, warmup_steps=args.warmup,
                          final_lr=args.final_lr),
        loss_kind=args.loss,
        tau=args.tau,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
    )


def _echo(cfg: PretrainConfig) -> dict:
    views, batch, loss, crop, overlap, epochs = row_echo(cfg)
    return {
        "views": views, "batch": batch, "loss": loss, "crop": crop, "overlap": overlap, "epochs": epochs,
        "preset": cfg.encoder.preset_name, "tau": cfg.tau, "seed": cfg.seed,
    }


def _synth_spec(args, prefix: str = "", seed: int | None = None) -> SyntheticSpec:
    get = lambda k: getattr(args, prefix + k)  # noqa: E731
    return SyntheticSpec(
        num_records=get("records"),
        channels=get("channels"),
        timepoints=get("timepoints"),
        num_classes=get("classes"),
        beat_rate_range=tuple(get("beat_rate")),
        noise_std=get("noise_std"),
        wander_std=get("wander_std"),
        seed=args.seed if seed is None else seed,
    )


def cmd_synth(args) -> int:
    ds = generate_synthetic(_synth_spec(args))
    try:
        sig, meta = save_dir(ds, args.out)
    except OSError as exc:
        raise DataError(f"cannot write to {args.out}: {exc}") from exc
    log.info("wrote %s and %s", sig, meta)
    _emit({"shape": list(ds.shape), "class_names": list(ds.class_names), "files": [str(sig), str(meta)]})
    return EXIT_OK


def cmd_pretrain(args) -> int:
    if args.dry_run and not args.data:
        cfg = _pretrain_config(args, in_channels=PRESETS[args.preset].in_channels)
        _emit({"config": _echo(cfg), "dry_run": True})
        return EXIT_OK
    if not args.data:
        raise UsageError("pretrain: error: --data is required unless --dry-run is given")
    ds = load_dir(args.data)
    train, _, _ = split(ds)
    cfg = _pretrain_config(args, in_channels=ds.shape[1])
    if args.dry_run:
        _emit({"config": _echo(cfg), "dry_run": True})
        return EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("always", FeasibilityWarning)
        result = pretrain(train, cfg)
    for note in result.warnings:
        log.warning(note)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(result.encoder, out / "checkpoint.npz", extra={"pretrain": cfg.to_dict()})
    trace = result.write_trace(out / "trace.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({
        "config": _echo(cfg),
        "checkpoint": str(ckpt),
        "trace": str(trace),
        "final_loss": result.loss_trace[-1],
        "steps": result.steps,
        "seconds": result.total_seconds,
        "warnings": result.warnings,
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    encoder, meta = load_checkpoint(args.checkpoint)
    ds = load_dir(args.data)
    if ds.shape[1] != encoder.cfg.in_channels:
        raise DataError(
            f"checkpoint expects {encoder.cfg.in_channels} input channels, dataset has {ds.shape[1]}"
        )
    if ds.shape[2] < encoder.cfg.min_length:
        raise DataError(f"records of length {ds.shape[2]} are shorter than the encoder minimum {encoder.cfg.min_length}")
    train, val, test = split(ds)
    feats = [forward_features(encoder, s.signals) for s in (train, val, test)]
    pcfg = ProbeConfig(epochs=args.epochs, threshold=args.threshold, batch_size=args.batch_size, seed=args.seed)
    log.info("probe: %d epochs on %d-dim features", pcfg.epochs, feats[0].shape[1])
    res = train_probe(feats[0], train.labels, feats[1], val.labels, pcfg, OptimConfig(peak_lr=args.lr))
    names = ds.class_names
    report = {
        "checkpoint": str(args.checkpoint),
        "probe_epochs": pcfg.epochs,
        "best_epoch": res.best_epoch,
        "validation": metric_report(res.probe.predict_proba(feats[1]), val.labels, pcfg.threshold, names).to_dict(),
        "test": metric_report(res.probe.predict_proba(feats[2]), test.labels, pcfg.threshold, names).to_dict(),
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(report)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import GROUPS, run_suites

    only = args.only
    if only and set(only) - set(GROUPS):
        raise UsageError(f"verify: error: unknown suite group(s) {sorted(set(only) - set(GROUPS))}; choose from {GROUPS}")
    results = run_suites(only)
    for r in results:
        print(r.row())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_NUMERIC
    print(f"all {len(results)} suites passed")
    return EXIT_OK


def _confirm(n: int) -> bool:
    if not sys.stdin.isatty():
        return False
    sys.stderr.write(f"This will launch {n} runs. Continue? [y/N] ")
    sys.stderr.flush()
    return sys.stdin.readline().strip().lower() in ("y", "yes")


def cmd_grid(args) -> int:
    from .harness import ExperimentConfig, results_root, run_grid

    if args.paper_grid:
        axes = dict(PUBLISHED_AXES)
        seeds = list(PUBLISHED_SEEDS)
    else:
        axes = {}
        for name, value in (("views", args.views_axis), ("crop", args.crops), ("overlap", args.overlaps),
                            ("epochs", args.epochs_axis), ("batch", args.batches), ("loss", args.losses)):
            if value:
                axes[name] = value
        seeds = args.seeds
        if not axes:
            axes = {"views": [args.views]}
    n_runs = len(seeds)
    for v in axes.values():
        n_runs *= len(v)
    if args.paper_grid:
        log.info("full grid: %d runs (%d configurations x %d seeds)", n_runs, n_runs // len(seeds), len(seeds))
        assert n_runs == full_grid_size()
        if not args.yes and not _confirm(n_runs):
            raise UsageError("grid: aborted; pass --yes to run the full grid non-interactively")

    if args.data:
        ds = load_dir(args.data)
        channels, source = ds.shape[1], {"data_path": str(Path(args.data).resolve())}
    else:
        spec = _synth_spec(args, prefix="synth_", seed=args.synth_seed)
        channels, source = spec.channels, {"synthetic": spec}
    args.views = args.views if args.views_axis is None else args.views_axis[0]
    args.epochs = args.epochs if args.epochs_axis is None else args.epochs_axis[0]
    base = ExperimentConfig(
        pretrain=_pretrain_config(args, channels),
        probe=ProbeConfig(epochs=args.probe_epochs),
        tag=args.tag,
        **source,
    )
    root = Path(args.results) if args.results else results_root()
    records, aggregate = run_grid(base, axes, seeds, root, workers=args.workers, resume=not args.no_resume)
    n_err = sum(r["status"] != "ok" for r in records)
    _emit({
        "results": str(root),
        "runs": len(records),
        "errors": n_err,
        "index": str(root / "index.csv"),
        "aggregate": str(root / "aggregate.csv"),
    })
    return EXIT_OK if n_err == 0 else EXIT_DATA


def cmd_bench(args) -> int:
    import csv

    from .loss import bench_positive_aggregation, bench_rows

    rows = []
    for m in args.views:
        report = bench_positive_aggregation(args.batch, m, args.dim, args.repeats, args.loss, seed=args.seed)
        log.info("M=%d fast %.0f ns, oracle %.0f ns", m, report["fast_path_ns"], report["oracle_path_ns"])
        rows.extend(bench_rows(report))
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "grid": cmd_grid,
    "bench": cmd_bench,
}


def _explicit_dests(argv: list[str]) -> set[str]:
    return {tok.split("=", 1)[0][2:].replace("-", "_") for tok in argv if tok.startswith("--")}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        args._explicit = _explicit_dests(argv) | getattr(args, "_config_keys", set())
        _setup_logging(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except PolywinError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except KeyboardInterrupt:
        sys.stderr.write("interrupted; completed records are kept\n")
        return 130


if __name__ == "__main__":
    sys.exit(main())
