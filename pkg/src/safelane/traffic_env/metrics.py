"""Traffic flow, driving comfort, reward and the per-epoch metrics record."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..reference_planner import Action

ES_CODE = -1


def traffic_flow(n_vehicles: int, road_length: float, mean_speed: float) -> float:
    """``F = rho * v_bar`` with ``rho = n / road_length``."""
    return n_vehicles / road_length * mean_speed


def comfort_single(accel, action, es=False, theta: float = 1.0):
    """Comfort score 3 / 2 / 1 / 0 for gentle KL, harsh KL, lane change, emergency stop.

    ``action`` may be an array of codes where ``-1`` marks an emergency stop.
    """
    accel = np.asarray(accel, dtype=float)
    action = np.asarray(action, dtype=int)
    es = np.asarray(es, dtype=bool) | (action == ES_CODE)
    kl = action == int(Action.KL)
    score = np.where(kl, np.where(np.abs(accel) < theta, 3, 2), 1)
    score = np.where(es, 0, score)
    return score if score.ndim else int(score)


def reward(F: float, C: float, w: float = 1.0) -> float:
    return w * F + C


@dataclass
class EpochRecord:
    episode: int
    epoch: int
    F: float
    C: float
    reward: float
    min_headway: float
    overrides: int
    es_count: int
    mean_speed: float = 0.0
    mean_headway: float = 0.0
    lane_changes: int = 0
    max_zeta: float = 0.0
    collision: bool = False


CSV_COLUMNS = ("episode", "epoch", "F", "C", "reward", "min_headway", "overrides", "es_count")


class MetricsWindow:
    """Append-only per-epoch records with trailing-window aggregation."""

    def __init__(self):
        self._records: list[EpochRecord] = []

    def append(self, rec: EpochRecord):
        self._records.append(rec)

    def __len__(self):
        return len(self._records)

    @property
    def records(self) -> tuple[EpochRecord, ...]:
        return tuple(self._records)

    def column(self, name: str, last: int | None = None) -> np.ndarray:
        recs = self._records if last is None else self._records[-last:]
        return np.array([getattr(r, name) for r in recs], dtype=float)

    def trailing_mean(self, name: str, window: int) -> float:
        col = self.column(name, window)
        return float(col.mean()) if len(col) else float("nan")

    def as_rows(self):
        keys = [f.name for f in fields(EpochRecord)]
        return [[asdict(r)[k] for k in keys] for r in self._records]
