#!/usr/bin/env python3
"""Freeway experiment: feedback RL against the IDM baseline over a density grid.

Writes summary CSVs, a comparison report and plot-ready JSON into the output
directory, then prints the comparison.

    python3 scripts/run_freeway.py --config configs/acceptance.yaml --out runs/freeway
"""
import argparse
import dataclasses as dc
from pathlib import Path

from safelane.harness.campaign import run_campaign
from safelane.harness.compare import compare_modes
from safelane.harness.config import resolve
from safelane.harness.plotdata import emit_plot_data


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/acceptance.yaml")
    ap.add_argument("--preset")
    ap.add_argument("--out", default="runs/freeway")
    ap.add_argument("--modes", default="feedback_rl,idm", help="comma separated; the first is the candidate")
    ap.add_argument("--seed", help="override the seed list")
    ap.add_argument("--density", help="override the density list")
    args = ap.parse_args()

    out = Path(args.out)
    base = resolve(args.config, args.preset, {"seed": args.seed, "density": args.density, "out": str(out)})
    modes = args.modes.split(",")
    tables = {}
    for mode in modes:
        print(f"running {mode} ...", flush=True)
        tables[mode] = run_campaign(dc.replace(base, mode=mode), out)
    if len(modes) > 1:
        report = compare_modes(tables, candidate=modes[0], baseline=modes[1])
        (out / f"compare_{modes[0]}_vs_{modes[1]}.json").write_text(report.to_json() + "\n")
        print("\n".join(report.lines()))
    emit_plot_data(tables, out / "plotdata.json")
    print(f"outputs in {out}")


if __name__ == "__main__":
    main()
