"""Command line entry point: ``mldsim {train,eval,dump-cloud,plot}``.

Exit codes: 0 success, 2 bad configuration or input data, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .config import ConfigError, RunConfig, config_hash, load_config
from .harness import DataError, evaluate, plot_learning_curves, run_training, write_cloud, write_metrics
from .neural import ArchitectureMismatch

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3
OUT_ENV = "MLDSIM_OUT"


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./runs)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. ppo.learning_rate=1e-4 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mldsim", description="Dual-arm shared-workspace RL simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one or both arms with PPO")
    _common(p)

    p = sub.add_parser("eval", help="greedy rollouts of a saved policy")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="saved policy (default: untrained, zero-action policy)")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--agent", type=int, choices=(1, 2), help="arm to drive (default: from checkpoint)")

    p = sub.add_parser("dump-cloud", help="write one labeled point cloud of the initial scene")
    _common(p)

    p = sub.add_parser("plot", help="render learning curves from metrics CSVs")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--window", type=int, default=50)
    return parser


def _config(args) -> RunConfig:
    return load_config(args.config, args.override, args.seed)


def _out_dir(args, cfg: RunConfig) -> Path:
    return args.out if args.out is not None else _default_out() / f"run_{config_hash(cfg)}"


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    summary = run_training(cfg, out)
    for name, rate in summary.success_rate_final.items():
        print(f"{name}: episodes={summary.episodes[name]} success_rate_final={rate:.3f}")
    print(f"wrote {out} (config_hash {summary.config_hash})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.episodes < 1:
        raise ConfigError("--episodes must be at least 1")
    index = None if args.agent is None else args.agent - 1
    summary, records = evaluate(cfg, args.checkpoint, args.episodes, cfg.seed, index)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    name = f"eval_agent{summary.agent + 1}"
    chash = config_hash(cfg)
    write_metrics(out / f"{name}.csv", records, chash)
    report = json.dumps({"config_hash": chash, **asdict(summary)}, sort_keys=True)
    (out / f"{name}.json").write_text(report + "\n")
    print(report)
    return EXIT_OK


def cmd_dump_cloud(args) -> int:
    cfg = _config(args)
    out = args.out if args.out is not None else _default_out() / f"cloud_{config_hash(cfg)}.csv"
    if out.suffix != ".csv":
        out = out / "cloud.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    n = write_cloud(cfg, out)
    print(f"wrote {n} points to {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    for p in args.csv:
        if not p.is_file():
            raise DataError(f"no such file: {p}")
    out = args.out if args.out is not None else args.csv[0].parent
    for path in plot_learning_curves(args.csv, out, args.window):
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "dump-cloud": cmd_dump_cloud, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, ArchitectureMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if args.command in ("eval", "plot") else EXIT_RUNTIME
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
