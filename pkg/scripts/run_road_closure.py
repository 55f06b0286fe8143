#!/usr/bin/env python3
"""Road-closure experiment: feedback RL and IDM on a ring with a closed stretch.

Also checks, per replicate, that no run recorded a collision.

    python3 scripts/run_road_closure.py --config configs/road_closure.yaml --out runs/closure
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
    ap.add_argument("--config", default="configs/road_closure.yaml")
    ap.add_argument("--out", default="runs/closure")
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--seed")
    args = ap.parse_args()

    out = Path(args.out)
    base = resolve(args.config, None, {"episodes": args.episodes, "epochs": args.epochs, "seed": args.seed,
                                       "out": str(out)})
    tables = {m: run_campaign(dc.replace(base, mode=m), out) for m in ("feedback_rl", "idm")}
    report = compare_modes(tables)
    (out / "compare_feedback_rl_vs_idm.json").write_text(report.to_json() + "\n")
    print("\n".join(report.lines()))
    emit_plot_data(tables, out / "plotdata.json")
    for mode, table in tables.items():
        crashes = sum(r["collisions"] for r in table.rows)
        worst = min(r["min_headway"] for r in table.rows)
        print(f"{mode}: collisions={crashes} min_headway={worst:.3f}")


if __name__ == "__main__":
    main()
