"""Command-line entry point.

Exit status: 0 success, 1 configuration error, 2 numerical failure,
3 an experiment's acceptance checks failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from contrastive_gap import gradcheck
from contrastive_gap.config import RunConfig, check_writable, parse_config
from contrastive_gap.embedding_space import PairedEmbeddings
from contrastive_gap.errors import ConfigError, Divergence, NumericalOverflow, ZeroVector
from contrastive_gap.experiments import EXPERIMENTS, run_experiment
from contrastive_gap.losses import VARIANTS
from contrastive_gap.metrics import gap_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKS = 0, 1, 2, 3
GRAD_TOLERANCE = 1e-5


def _dims(text: str) -> list[int]:
    try:
        dims = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not dims:
        raise argparse.ArgumentTypeError("expected at least one dimension")
    return dims


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contrastive-gap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="execute an experiment")
    run.add_argument("config_path", nargs="?", metavar="CONFIG", help="JSON run config")
    run.add_argument("--config", dest="config_flag", metavar="PATH", help="JSON run config")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", metavar="DIR")
    run.add_argument("--deterministic", action="store_true", default=None,
                     help="omit wall-clock timing so reruns are byte-identical")
    run.add_argument("--dims", type=_dims, metavar="LIST", help="e.g. 32,64,128")
    run.add_argument("--variant", choices=sorted(VARIANTS))
    run.add_argument("--paper-scale", action="store_true", default=None)
    run.add_argument("--epochs", type=int)
    run.add_argument("--workers", type=int)

    gc = sub.add_parser("grad-check", help="finite-difference check of loss and encoder gradients")
    gc.add_argument("--instances", type=int, default=10)
    gc.add_argument("--seed", type=int, default=0)

    for name, text in (("report", "gap report for stored paired embeddings"),
                       ("pca", "explained-variance curve (CSV) for stored paired embeddings")):
        p = sub.add_parser(name, help=text)
        p.add_argument("embeddings", metavar="EMBEDDINGS_JSON")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int, default=0, help="probe split seed" if name == "report" else None)
    return parser


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    if args.config_path and args.config_flag:
        raise ConfigError("config", "give the config either positionally or with --config, not both")
    cfg = parse_config(args.config_path or args.config_flag, experiment=args.experiment,
                       seed=args.seed, out=args.out, deterministic=args.deterministic,
                       dims=args.dims, variant=args.variant, paper_scale=args.paper_scale,
                       epochs=args.epochs, workers=args.workers)
    check_writable(cfg.output_dir)
    start = time.perf_counter()
    result = run_experiment(cfg.experiment, loss=cfg.loss, optimizer=cfg.optimizer_overrides(),
                            workers=cfg.workers)
    resolved = cfg.to_dict()
    result.write(cfg.output_dir, run_config=resolved)
    _write_json(cfg.output_dir / "run_config.json", resolved)
    if not cfg.deterministic:
        _write_json(cfg.output_dir / "timing.json", {"wall_seconds": time.perf_counter() - start})
    _print_checks(cfg, result)
    return EXIT_OK if result.passed else EXIT_CHECKS


def _print_checks(cfg: RunConfig, result) -> None:
    print(f"{cfg.experiment.name}: {'PASS' if result.passed else 'FAIL'} -> {cfg.output_dir}")
    for name, ok in result.checks.items():
        print(f"  {'pass' if ok else 'FAIL'}  {name}")


def cmd_grad_check(args) -> int:
    losses = gradcheck.loss_errors(instances=args.instances, seed=args.seed)
    enc = gradcheck.encoder_error(seed=args.seed)
    worst = 0.0
    print(f"{'term':<10} {'max rel err':>12} {'entrywise':>12}")
    for name, err in [*losses.items(), ("encoder", enc)]:
        worst = max(worst, err["relative"])
        print(f"{name:<10} {err['relative']:12.3e} {err['entrywise']:12.3e}")
    ok = worst <= GRAD_TOLERANCE
    print(f"{'ok' if ok else 'FAILED'}: worst relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_CHECKS


def _load_pairs(path: str) -> PairedEmbeddings:
    try:
        return PairedEmbeddings.load(path)
    except OSError as exc:
        raise ConfigError("embeddings", f"cannot read {path}: {exc.strerror or exc}") from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError("embeddings", f"{path} is not a paired-embeddings file: {exc}") from exc


def _resolved_io(command: str, args) -> dict:
    return {"command": command, "embeddings": str(args.embeddings), "seed": args.seed}


def cmd_report(args) -> int:
    report = gap_report(_load_pairs(args.embeddings), seed=args.seed)
    print(json.dumps(report.to_dict(), indent=2))
    if args.out:
        out = Path(args.out)
        check_writable(out)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.csv").write_text(report.to_csv())
        _write_json(out / "run_config.json", _resolved_io("report", args))
    return EXIT_OK


def cmd_pca(args) -> int:
    report = gap_report(_load_pairs(args.embeddings), seed=args.seed)
    text = report.pca_csv()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        check_writable(out)
        (out / "pca.csv").write_text(text)
        _write_json(out / "run_config.json", _resolved_io("pca", args))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "grad-check": cmd_grad_check, "report": cmd_report, "pca": cmd_pca}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        # overflow surfaces as NumericalOverflow/Divergence below, not as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, ZeroVector):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Divergence, NumericalOverflow, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
