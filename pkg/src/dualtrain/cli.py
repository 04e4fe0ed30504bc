"""Command-line entry point: ``dualtrain <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import experiment_from_dict, load_run_config, read_document
from .errors import DualTrainError
from .zoo import ArchConfig, flops_forward


def _common(p: argparse.ArgumentParser, *flags: str) -> None:
    if "seed" in flags:
        p.add_argument("--seed", type=int, help="override the config's seed (experiments: run only this seed)")
    if "out" in flags:
        p.add_argument("--out-dir", type=Path, help="where run or experiment files are written")
    if "data" in flags:
        p.add_argument("--data-dir", type=Path, help="CIFAR-10 binary batch directory")
    if "threads" in flags:
        p.add_argument("--threads", type=int, help="parallel runs (experiments only)")


def cmd_train(args) -> int:
    from .trainer import load_dataset, train

    config = load_run_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    report = train(config, load_dataset(config, args.data_dir))
    out = args.out_dir or Path("runs") / f"{config.mode}_seed{config.seed}"
    report.save(out)
    print(f"wrote {out}")
    print(report.metrics_json(), end="")
    return 0 if report.valid else 1


def cmd_experiment(args) -> int:
    from .experiment import report_text, run_experiment

    raw = read_document(args.spec)
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    spec = experiment_from_dict(raw)
    out = args.out_dir or Path("experiments") / Path(args.spec).stem
    report = run_experiment(spec, out, args.data_dir, args.threads)
    print(f"wrote {out}")
    print(report_text(report), end="")
    return 0 if report["aborted_runs"] == 0 and not report["problems"] else 1


def _arch_from(arg: str) -> ArchConfig:
    """``Family:level`` shorthand, or a TOML/JSON file with the arch keys
    at top level or under ``[base]``."""
    if ":" in arg and not Path(arg).exists():
        family, level = arg.split(":", 1)
        return ArchConfig(family, int(level))
    raw = read_document(arg)
    raw = raw.get("base", raw)
    return ArchConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})


def cmd_flops(args) -> int:
    cfg = _arch_from(args.arch)
    r = cfg.resolved()
    print(f"{r.family} level {r.level} layers={list(r.stage_layers)} widths={list(r.stage_widths)}")
    print(f"forward FLOPs per example: {flops_forward(cfg)}")
    return 0


def cmd_report(args) -> int:
    from .experiment import report_text, write_report

    report = write_report(args.spec_dir)
    print(report_text(report), end="")
    return 0 if report["aborted_runs"] == 0 and not report["problems"] else 1


def cmd_plot(args) -> int:
    from .plot import plot_trace

    out = plot_trace(args.trace, args.out)
    print(f"wrote {out}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 1 if run_selftest() else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualtrain", description="Dual-model motivated training")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="run one training config")
    s.add_argument("config", type=Path)
    _common(s, "seed", "out", "data")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("experiment", help="run every variant and seed of an experiment spec")
    s.add_argument("spec", type=Path)
    _common(s, "seed", "out", "data", "threads")
    s.set_defaults(fn=cmd_experiment)

    s = sub.add_parser("flops", help="forward FLOPs of an architecture")
    s.add_argument("arch", help="Family:level (e.g. DepthResNet:0) or a config file")
    s.set_defaults(fn=cmd_flops)

    s = sub.add_parser("report", help="recompute an experiment's report from its run directories")
    s.add_argument("spec_dir", type=Path)
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("plot", help="SVG loss/switch plot from a trace CSV")
    s.add_argument("trace", type=Path)
    s.add_argument("-o", "--out", type=Path)
    s.set_defaults(fn=cmd_plot)

    s = sub.add_parser("selftest", help="run the quick oracle checks")
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except DualTrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
