"""Ring-road geometry, lane occupancy and neighbour lookup.

Entities are vehicles followed by closure obstacles.  Every ordering uses
forward arc distance between centres on the ring; bumper gaps subtract half
of each length.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..reference_planner import LaneGeometry


@dataclass(frozen=True)
class Closure:
    lane: int
    start: float
    end: float

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass(frozen=True)
class RoadConfig:
    length: float = 1000.0
    lanes: int = 3
    lane_width: float = 3.5
    closures: tuple[Closure, ...] = field(default_factory=tuple)
    vehicle_length: float = 4.0
    density_unit: float = 5.0

    def __post_init__(self):
        if self.lanes < 2:
            raise ValueError("need at least two lanes")
        if self.length <= 0 or self.lane_width <= 0 or self.vehicle_length <= 0:
            raise ValueError("road dimensions must be positive")
        for c in self.closures:
            if not (0 <= c.lane < self.lanes and 0 <= c.start < c.end <= self.length):
                raise ValueError(f"closure {c} outside the road")

    @property
    def geometry(self) -> LaneGeometry:
        return LaneGeometry(self.lanes, self.lane_width)

    def vehicles_for_density(self, rho: float) -> int:
        return int(round(rho * self.length / self.density_unit))

    def density(self, n: int) -> float:
        """Density in the units used for traffic flow: vehicles per road length."""
        return n / self.length


def arc_forward(a, b, ring: float):
    """Forward arc distance from ``a`` to ``b`` in ``[0, ring)``."""
    return np.mod(np.asarray(b, dtype=float) - np.asarray(a, dtype=float), ring)


def arc_distance(a, b, ring: float):
    d = arc_forward(a, b, ring)
    return np.minimum(d, ring - d)


def occupancy(p_y, assigned_lane, geometry: LaneGeometry) -> np.ndarray:
    """Lanes claimed by each vehicle: the lane under ``p_y`` plus its assigned lane."""
    p_y = np.atleast_1d(p_y)
    occ = np.zeros((len(p_y), geometry.n_lanes), dtype=bool)
    idx = np.arange(len(p_y))
    occ[idx, geometry.lane_of(p_y)] = True
    occ[idx, np.asarray(assigned_lane, dtype=int)] = True
    return occ


@dataclass
class Entities:
    """Flat arrays over vehicles (first ``n_veh``) and closure obstacles."""

    pos: np.ndarray
    speed: np.ndarray
    cos_psi: np.ndarray
    length: np.ndarray
    occ: np.ndarray
    n_veh: int

    @classmethod
    def build(cls, X, assigned_lane, road: RoadConfig) -> "Entities":
        X = np.atleast_2d(X)
        occ_v = occupancy(X[:, 1], assigned_lane, road.geometry)
        n_obs = len(road.closures)
        occ_o = np.zeros((n_obs, road.lanes), dtype=bool)
        for k, c in enumerate(road.closures):
            occ_o[k, c.lane] = True
        return cls(
            pos=np.concatenate([X[:, 0], [c.center for c in road.closures]]),
            speed=np.concatenate([X[:, 3], np.zeros(n_obs)]),
            cos_psi=np.concatenate([np.cos(X[:, 2]), np.ones(n_obs)]),
            length=np.concatenate([np.full(len(X), road.vehicle_length), [c.length for c in road.closures]]),
            occ=np.concatenate([occ_v, occ_o]),
            n_veh=len(X),
        )


@dataclass
class NeighborTable:
    """Nearest leader/follower of every vehicle in every lane.

    ``lead_idx[i, l]`` is an entity index or -1; ``lead_dist`` is the centre
    arc distance (inf when absent).  ``lead_gap`` is the bumper gap.
    """

    lead_idx: np.ndarray
    lead_dist: np.ndarray
    lead_gap: np.ndarray
    follow_idx: np.ndarray
    follow_dist: np.ndarray
    follow_gap: np.ndarray


def neighbor_table(ent: Entities, ring: float, max_range: float = np.inf) -> NeighborTable:
    n = ent.n_veh
    fwd = arc_forward(ent.pos[:n, None], ent.pos[None, :], ring)
    bwd = arc_forward(ent.pos[None, :], ent.pos[:n, None], ring)
    self_idx = np.arange(n)
    fwd[self_idx, self_idx] = np.inf
    bwd[self_idx, self_idx] = np.inf
    half = 0.5 * (ent.length[:n, None] + ent.length[None, :])
    n_lanes = ent.occ.shape[1]
    shape = (n, n_lanes)
    out = {k: np.empty(shape) for k in ("lead_dist", "lead_gap", "follow_dist", "follow_gap")}
    lead_idx = np.full(shape, -1, dtype=int)
    follow_idx = np.full(shape, -1, dtype=int)
    for lane in range(n_lanes):
        member = ent.occ[:, lane][None, :]
        for D, idx_out, dist_key, gap_key in ((fwd, lead_idx, "lead_dist", "lead_gap"),
                                             (bwd, follow_idx, "follow_dist", "follow_gap")):
            Dl = np.where(member, D, np.inf)
            # range is on the bumper gap, so long closures are seen by their near end
            Gl = Dl - half
            Gl = np.where(Gl <= max_range, Gl, np.inf)
            j = np.argmin(np.where(np.isfinite(Gl), Dl, np.inf), axis=1)
            found = np.isfinite(Gl[self_idx, j])
            idx_out[:, lane] = np.where(found, j, -1)
            out[dist_key][:, lane] = np.where(found, Dl[self_idx, j], np.inf)
            out[gap_key][:, lane] = np.where(found, Gl[self_idx, j], np.inf)
    return NeighborTable(lead_idx=lead_idx, follow_idx=follow_idx, **out)


def headway_metrics(ent: Entities, ring: float, table: NeighborTable | None = None) -> dict:
    """Minimum same-lane bumper gap over all vehicles.

    Gaps to closure obstacles count in both directions.  A lane holding a
    single vehicle contributes its self-gap ``ring - vehicle_length``.
    """
    table = neighbor_table(ent, ring) if table is None else table
    n = ent.n_veh
    occ = ent.occ[:n]
    self_gap = ring - ent.length[:n, None]
    lead = np.where(table.lead_idx >= 0, table.lead_gap, self_gap)
    obstacle_behind = table.follow_idx >= n
    rear = np.where(obstacle_behind, table.follow_gap, np.inf)
    gaps = np.where(occ, np.minimum(lead, rear), np.inf)
    per_lane = np.min(gaps, axis=0, initial=np.inf)
    lead_only = np.where(occ & (table.lead_idx >= 0), table.lead_gap, np.nan)
    return {"min_headway": float(np.min(per_lane, initial=np.inf)),
            "per_lane": per_lane,
            "mean_headway": float(np.nanmean(lead_only)) if np.any(np.isfinite(lead_only)) else float("nan")}
