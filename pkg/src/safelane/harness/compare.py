"""Side-by-side comparison of campaign summaries from different modes."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .campaign import ResultTable, read_csv


class GridMismatchError(ValueError):
    """The (density, seed) grids of the compared results differ."""


_NUMERIC = {"density": float, "seed": int, "n_vehicles": int, "mean_F": float, "mean_C": float,
            "mean_reward": float, "total_overrides": int, "total_es": int, "min_headway": float,
            "collisions": int, "train_epochs": int, "eval_epochs": int}


def normalize_rows(results) -> list[dict]:
    """Accept a ResultTable, a summary CSV path or a list of row dicts (strings allowed)."""
    if isinstance(results, ResultTable):
        rows = results.rows
    elif isinstance(results, (str, Path)):
        rows = read_csv(results)
    else:
        rows = list(results)
    out = []
    for r in rows:
        out.append({k: (_NUMERIC[k](v) if k in _NUMERIC else v) for k, v in r.items()})
    return out


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values) -> "Stat":
        v = np.asarray(list(values), dtype=float)
        # population std: the replicates are the whole sample we report on
        return cls(float(np.mean(v)), float(np.std(v)), len(v))


@dataclass(frozen=True)
class DensityComparison:
    density: float
    seeds: tuple[int, ...]
    flow: dict[str, Stat]
    comfort: dict[str, Stat]
    flow_delta: Stat
    comfort_delta: Stat
    overrides: dict[str, Stat]


@dataclass
class ComparisonReport:
    candidate: str
    baseline: str
    densities: tuple[float, ...]
    rows: list[DensityComparison] = field(default_factory=list)
    override_trend: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def lines(self) -> list[str]:
        out = [f"{'density':>8} {'dF mean':>10} {'dF std':>9} {'dC mean':>9} {'dC std':>8}"]
        for r in self.rows:
            out.append(f"{r.density:8g} {r.flow_delta.mean:10.4f} {r.flow_delta.std:9.4f} "
                       f"{r.comfort_delta.mean:9.4f} {r.comfort_delta.std:8.4f}")
        for mode, ok in self.override_trend.items():
            out.append(f"override trend ({mode}): {'PASS' if ok else 'FAIL'}")
        return out


def _grid(rows) -> dict[float, dict[int, dict]]:
    g: dict[float, dict[int, dict]] = {}
    for r in rows:
        cell = g.setdefault(r["density"], {})
        if r["seed"] in cell:
            raise GridMismatchError(f"duplicate row for density {r['density']:g} seed {r['seed']}")
        cell[r["seed"]] = r
    return g


def nondecreasing(values: Iterable[float]) -> bool:
    v = list(values)
    return all(b >= a for a, b in zip(v, v[1:]))


def compare_modes(results: Mapping[str, object], candidate: str = "feedback_rl",
                  baseline: str = "idm") -> ComparisonReport:
    """Per-density deltas ``candidate - baseline`` in flow and comfort.

    Deltas are paired by seed.  Every mode must cover the same grid.
    """
    if candidate not in results or baseline not in results:
        raise KeyError(f"need results for {candidate!r} and {baseline!r}, got {sorted(results)}")
    grids = {mode: _grid(normalize_rows(r)) for mode, r in results.items()}
    ref = grids[baseline]
    ref_keys = {d: sorted(s) for d, s in ref.items()}
    for mode, g in grids.items():
        keys = {d: sorted(s) for d, s in g.items()}
        if keys != ref_keys:
            raise GridMismatchError(f"grid of {mode!r} {keys} differs from {baseline!r} {ref_keys}")
    if not ref:
        raise GridMismatchError("no results to compare")

    densities = tuple(sorted(ref))
    report = ComparisonReport(candidate=candidate, baseline=baseline, densities=densities)
    for d in densities:
        seeds = tuple(ref_keys[d])
        col = lambda mode, key: [grids[mode][d][s][key] for s in seeds]  # noqa: E731
        report.rows.append(DensityComparison(
            density=d, seeds=seeds,
            flow={m: Stat.of(col(m, "mean_F")) for m in grids},
            comfort={m: Stat.of(col(m, "mean_C")) for m in grids},
            flow_delta=Stat.of(np.subtract(col(candidate, "mean_F"), col(baseline, "mean_F"))),
            comfort_delta=Stat.of(np.subtract(col(candidate, "mean_C"), col(baseline, "mean_C"))),
            overrides={m: Stat.of(col(m, "total_overrides")) for m in grids},
        ))
    for mode in grids:
        if mode == "feedback_rl":
            report.override_trend[mode] = nondecreasing(r.overrides[mode].mean for r in report.rows)
    return report
