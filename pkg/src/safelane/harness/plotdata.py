"""Plot-ready JSON series.

Document layout (``SCHEMA`` = ``safelane.plotdata/1``)::

    {
      "schema": "safelane.plotdata/1",
      "flow_vs_density":    {<mode>: {"density": [...], "mean": [...], "std": [...], "n": [...]}},
      "comfort_vs_density": {<mode>: {"density": [...], "mean": [...], "std": [...], "n": [...]}},
      "headway_vs_epoch":   [{"mode": str, "density": float, "seed": int,
                              "epoch": [int, ...], "min_headway": [float, ...]}]
    }

``epoch`` counts recorded epochs across episodes (training then evaluation).
Non-finite headways (an empty lane) are written as ``null``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .campaign import ResultTable, read_csv
from .compare import normalize_rows

SCHEMA = "safelane.plotdata/1"


@dataclass
class Series:
    density: list[float] = field(default_factory=list)
    mean: list[float] = field(default_factory=list)
    std: list[float] = field(default_factory=list)
    n: list[int] = field(default_factory=list)


@dataclass
class Trace:
    mode: str
    density: float
    seed: int
    epoch: list[int]
    min_headway: list[float | None]


@dataclass
class PlotData:
    flow_vs_density: dict[str, Series] = field(default_factory=dict)
    comfort_vs_density: dict[str, Series] = field(default_factory=dict)
    headway_vs_epoch: list[Trace] = field(default_factory=list)

    def to_dict(self) -> dict:
        ser = lambda s: {"density": s.density, "mean": s.mean, "std": s.std, "n": s.n}  # noqa: E731
        return {"schema": SCHEMA,
                "flow_vs_density": {m: ser(s) for m, s in self.flow_vs_density.items()},
                "comfort_vs_density": {m: ser(s) for m, s in self.comfort_vs_density.items()},
                "headway_vs_epoch": [t.__dict__ for t in self.headway_vs_epoch]}

    @classmethod
    def from_dict(cls, d: dict) -> "PlotData":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported plot data schema {d.get('schema')!r}")
        return cls({m: Series(**s) for m, s in d["flow_vs_density"].items()},
                   {m: Series(**s) for m, s in d["comfort_vs_density"].items()},
                   [Trace(**t) for t in d["headway_vs_epoch"]])


def _series(rows, key: str) -> Series:
    s = Series()
    for d in sorted({r["density"] for r in rows}):
        v = np.array([r[key] for r in rows if r["density"] == d], dtype=float)
        s.density.append(float(d))
        s.mean.append(float(v.mean()))
        s.std.append(float(v.std()))
        s.n.append(len(v))
    return s


def _finite_or_none(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def build_plot_data(results: Mapping[str, object], traces: Mapping[tuple, list] | None = None) -> PlotData:
    """``results`` maps mode to a ResultTable, summary CSV path or rows.

    Headway traces come from ResultTable replicates, plus any extra
    ``traces[(mode, density, seed)]`` lists of records or row dicts.
    """
    if not results:
        raise ValueError("no results to plot")
    pd = PlotData()
    collected: dict[tuple, list[float]] = {}
    for mode, res in sorted(results.items()):
        rows = normalize_rows(res)
        pd.flow_vs_density[mode] = _series(rows, "mean_F")
        pd.comfort_vs_density[mode] = _series(rows, "mean_C")
        if isinstance(res, ResultTable):
            for (d, s), rep in sorted(res.replicates.items()):
                collected[(mode, d, s)] = [r.min_headway for r in rep.train + rep.eval]
    for key, recs in (traces or {}).items():
        collected[key] = [float(r["min_headway"] if isinstance(r, dict) else r.min_headway) for r in recs]
    for (mode, d, s), hw in sorted(collected.items()):
        pd.headway_vs_epoch.append(Trace(mode, float(d), int(s), list(range(len(hw))),
                                         [_finite_or_none(h) for h in hw]))
    return pd


def emit_plot_data(results: Mapping[str, object], path, traces: Mapping[tuple, list] | None = None) -> PlotData:
    pd = build_plot_data(results, traces)
    Path(path).write_text(json.dumps(pd.to_dict(), indent=1, sort_keys=True) + "\n")
    return pd


def load_plot_data(path) -> PlotData:
    return PlotData.from_dict(json.loads(Path(path).read_text()))


_TAG = re.compile(r"^(?P<mode>[a-z_]+)_rho(?P<density>[0-9.e+-]+)_seed(?P<seed>-?\d+)$")


def collect_run_dir(out_dir) -> tuple[dict[str, Path], dict[tuple, list[dict]]]:
    """Summary CSVs and per-epoch CSVs found under a campaign output directory."""
    out = Path(out_dir)
    summaries = {p.stem.removeprefix("summary_"): p for p in sorted(out.glob("summary_*.csv"))}
    traces = {}
    for p in sorted((out / "epochs").glob("*.csv")):
        m = _TAG.match(p.stem)
        if m:
            traces[(m["mode"], float(m["density"]), int(m["seed"]))] = read_csv(p)
    return summaries, traces
