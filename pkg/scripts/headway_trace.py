#!/usr/bin/env python3
"""Minimum headway per training epoch, with and without the safety supervisor.

Vanilla RL episodes end at the first overlap; feedback RL keeps every gap
positive.  Prints one line per episode and writes the traces as JSON.

    python3 scripts/headway_trace.py --density 0.3 --episodes 20 --out runs/headway
"""
import argparse
import dataclasses as dc
import json
from pathlib import Path

import numpy as np

from safelane.harness.campaign import run_replicate
from safelane.harness.config import RoadSettings, preset
from safelane.harness.plotdata import PlotData, Trace


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--density", type=float, default=0.3)
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--length", type=float, default=500.0, help="ring length")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/headway")
    args = ap.parse_args()

    cfg = dc.replace(preset("desk"), densities=(args.density,), seeds=(args.seed,), episodes=args.episodes,
                     epochs=args.epochs, eval_episodes=0, road=RoadSettings(length=args.length))
    pd = PlotData()
    for mode in ("feedback_rl", "vanilla_rl"):
        res = run_replicate(dc.replace(cfg, mode=mode), args.density, args.seed)
        hw = [r.min_headway for r in res.train]
        pd.headway_vs_epoch.append(Trace(mode, args.density, args.seed, list(range(len(hw))),
                                         [float(h) if np.isfinite(h) else None for h in hw]))
        print(f"{mode}:")
        for ep in sorted({r.episode for r in res.train}):
            recs = [r for r in res.train if r.episode == ep]
            tag = " collision" if recs[-1].collision else ""
            print(f"  episode {ep:3d} epochs {len(recs):3d} min headway {min(r.min_headway for r in recs):8.3f}{tag}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "headway.json").write_text(json.dumps(pd.to_dict(), indent=1) + "\n")
    print(f"wrote {out / 'headway.json'}")


if __name__ == "__main__":
    main()
