"""``encoderlab`` command line: train, evaluate, analyze, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .autodiff.checkpoint import CheckpointError
from .autodiff.tensor import NonFiniteError
from .experiment import ConfigError, analyze_run, evaluate_run, load_config, train_run
from .report import ReportError, build_report

EXIT_OK, EXIT_CONFIG, EXIT_NAN = 0, 2, 3

# flag -> experiment key
TRAIN_FLAGS = {
    "algo": str, "env": str, "encoder": str, "tau": int, "base_channels": str, "track": str, "levels": int,
    "level_seed": int, "total_steps": int, "seeds": str, "eval_every": int, "eval_episodes": int,
    "out_dir": str, "kernels": str, "dormant_every": int,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="encoderlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run per seed")
    t.add_argument("--config", type=Path, help="INI file with [experiment] and [train] sections")
    for name, typ in TRAIN_FLAGS.items():
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config value, e.g. --set train.lr=1e-3")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("evaluate", help="score a finished run on a level split")
    e.add_argument("run_dir", type=Path)
    e.add_argument("--split", choices=["train", "test", "both"], default="both")
    e.add_argument("--episodes", type=int)
    e.add_argument("--out", type=Path, help="also append the records to this JSON-lines file")

    a = sub.add_parser("analyze", help="run a probe on a finished run")
    a.add_argument("run_dir", type=Path)
    a.add_argument("--probe", choices=["sensitivity", "dormant"], required=True)
    a.add_argument("--states", type=int, default=64, help="frames for the sensitivity map")
    a.add_argument("--batch", type=int, help="probe batch size for dormancy")
    a.add_argument("--out", type=Path)

    r = sub.add_parser("report", help="aggregate run directories into CSV tables and SVG curves")
    r.add_argument("run_dirs", type=Path, nargs="+")
    r.add_argument("--out", type=Path, default=Path("report"))
    r.add_argument("--resamples", type=int, default=2000)
    return p


def _overrides(args) -> dict[str, str]:
    out = {}
    for name in TRAIN_FLAGS:
        value = getattr(args, name)
        if value is not None:
            out[name] = str(value)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _progress(step: int, total: int) -> None:
    print(f"  step {step}/{total}", file=sys.stderr, flush=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = load_config(args.config, _overrides(args))
            for seed in cfg.seeds:
                run_dir = train_run(cfg, seed, log_progress=None if args.quiet else _progress)
                print(run_dir)
        elif args.command == "evaluate":
            splits = None if args.split == "both" else [args.split]
            records = evaluate_run(args.run_dir, splits, args.episodes)
            for r in records:
                print(json.dumps(r, sort_keys=True))
            if args.out:
                with open(args.out, "a", encoding="utf-8") as fh:
                    for r in records:
                        fh.write(json.dumps(r, sort_keys=True) + "\n")
        elif args.command == "analyze":
            result = analyze_run(args.run_dir, args.probe, args.states, args.batch, args.out)
            print(json.dumps(result, sort_keys=True))
        elif args.command == "report":
            for name, path in build_report(args.run_dirs, args.out, args.resamples).items():
                print(f"{name}: {path}")
    except (ConfigError, ReportError, CheckpointError, FileNotFoundError) as e:
        print(f"encoderlab: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as e:
        print(f"encoderlab: numerical abort: {e}", file=sys.stderr)
        return EXIT_NAN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
