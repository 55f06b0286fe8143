"""Command line entry point: ``safelane {train,eval,compare,plotdata}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .campaign import SUMMARY_COLUMNS, ResultTable, run_campaign, run_eval_only
from .compare import GridMismatchError, compare_modes
from .config import MODES, PRESETS, ConfigError, env_overrides, resolve
from .plotdata import collect_run_dir, emit_plot_data


def _add_campaign_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML campaign file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named starting configuration")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--density", help="one density or a comma separated list")
    p.add_argument("--seed", help="one seed or a comma separated list")
    p.add_argument("--episodes", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safelane", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_campaign_flags(sub.add_parser("train", help="train (or roll out IDM) over the density/seed grid"))
    _add_campaign_flags(sub.add_parser("eval", help="greedy evaluation of saved checkpoints"))
    p = sub.add_parser("compare", help="compare summaries of two modes")
    p.add_argument("--out", help="campaign directory holding summary_<mode>.csv files")
    p.add_argument("--candidate", default="feedback_rl", choices=MODES)
    p.add_argument("--baseline", default="idm", choices=MODES)
    p = sub.add_parser("plotdata", help="write plot-ready JSON series")
    p.add_argument("--out", help="campaign directory")
    p.add_argument("--file", default="plotdata.json", help="output file name inside --out")
    return parser


def _overrides(args) -> dict:
    return {k: getattr(args, k, None) for k in ("mode", "density", "seed", "episodes", "epochs", "out")}


def _print_table(table: ResultTable) -> None:
    cols = ("density", "seed", "mode", "mean_F", "mean_C", "total_overrides", "min_headway", "collisions")
    print(" ".join(f"{c:>15}" for c in cols))
    for r in table.rows:
        print(" ".join(f"{r[c]:>15.4f}" if isinstance(r[c], float) else f"{r[c]!s:>15}" for c in cols))


def _out_dir(args) -> Path:
    out = args.out or env_overrides().get("out")
    if not out:
        raise ConfigError("--out is required")
    return Path(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("train", "eval"):
            cfg = resolve(args.config, args.preset, _overrides(args))
            if args.command == "train":
                table = run_campaign(cfg, cfg.out)
            else:
                if cfg.out is None:
                    raise ConfigError("--out is required")
                table = run_eval_only(cfg, cfg.out)
            _print_table(table)
        elif args.command == "compare":
            out = _out_dir(args)
            summaries = {p.stem.removeprefix("summary_"): p for p in sorted(out.glob("summary_*.csv"))}
            report = compare_modes(summaries, candidate=args.candidate, baseline=args.baseline)
            (out / f"compare_{args.candidate}_vs_{args.baseline}.json").write_text(report.to_json() + "\n")
            print("\n".join(report.lines()))
        else:
            out = _out_dir(args)
            summaries, traces = collect_run_dir(out)
            if not summaries:
                raise ConfigError(f"no summary_<mode>.csv under {out}")
            emit_plot_data(summaries, out / args.file, traces)
            print(out / args.file)
    except (ConfigError, GridMismatchError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

__all__ = ["main", "build_parser", "SUMMARY_COLUMNS"]
