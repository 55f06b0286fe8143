"""Own-sensor observation, epsilon-neighbours and shared lane speeds.

Feature layout (15 + 3 inputs to the Q-network):

    o = [v / v_des, lane / (lanes - 1), O(k) / K_f,
         for lane in (left, own, right):
             leader gap / R, (v_leader - v) / v_des, follower gap / R, (v_follower - v) / v_des]
    m = [M(left), M(own), M(right)] / v_des

An empty lane within sensing range ``R`` reads as gap ``R`` with zero relative
speed; a lane that does not exist reads as gap 0.  Shared speeds use -1 for a
lane that does not exist.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..traffic_env.road import Entities, NeighborTable, arc_forward

OBS_DIM = 15
SHARED_DIM = 3
ABSENT_LANE = -1.0


@dataclass
class Observation:
    v: float
    lane: int
    gaps: np.ndarray
    rel_speeds: np.ndarray
    lane_change_freq: float


@dataclass
class SharedInfo:
    lane_speeds: np.ndarray


def lane_change_frequency(history) -> np.ndarray:
    """``O(k) = -(lane changes in the last K_f epochs)`` from a ``(N, K_f)`` 0/1 history."""
    return -np.sum(np.atleast_2d(history), axis=-1).astype(float)


def side_lanes(lane, n_lanes: int):
    """Lane indices (left, own, right) and whether each exists."""
    lane = np.asarray(lane, dtype=int)
    lanes = np.stack([lane + 1, lane, lane - 1], axis=-1)
    exists = (lanes >= 0) & (lanes < n_lanes)
    return np.clip(lanes, 0, n_lanes - 1), exists


def observe_batch(egos, X, lane, ent: Entities, table: NeighborTable, lc_history, sensing_range: float,
                  v_desired: float, n_lanes: int) -> np.ndarray:
    egos = np.asarray(egos, dtype=int)
    n = len(egos)
    v = X[egos, 3]
    lanes, exists = side_lanes(lane[egos], n_lanes)
    out = np.zeros((n, OBS_DIM))
    out[:, 0] = v / v_desired
    out[:, 1] = lane[egos] / max(n_lanes - 1, 1)
    K_f = np.atleast_2d(lc_history).shape[-1]
    out[:, 2] = lane_change_frequency(lc_history[egos]) / K_f
    rows = egos[:, None]
    R = sensing_range
    for side in range(3):
        l = lanes[:, side]
        for k, (idx, gap) in enumerate(((table.lead_idx, table.lead_gap), (table.follow_idx, table.follow_gap))):
            j = idx[egos, l]
            g = gap[egos, l]
            present = j >= 0
            gnorm = np.where(present, np.clip(g, -R, R) / R, 1.0)
            dv = np.where(present, (ent.speed[np.where(present, j, 0)] - v) / v_desired, 0.0)
            gnorm = np.where(exists[:, side], gnorm, 0.0)
            dv = np.where(exists[:, side], dv, 0.0)
            out[:, 3 + 4 * side + 2 * k] = gnorm
            out[:, 3 + 4 * side + 2 * k + 1] = dv
    del rows
    return out


def observe(egos, X, lane, ent, table, lc_history, sensing_range, v_desired, n_lanes) -> list[Observation]:
    feats = observe_batch(egos, X, lane, ent, table, lc_history, sensing_range, v_desired, n_lanes)
    obs = []
    for i, e in enumerate(np.atleast_1d(egos)):
        blocks = feats[i, 3:].reshape(3, 4)
        obs.append(Observation(v=float(X[e, 3]), lane=int(lane[e]),
                               gaps=blocks[:, [0, 2]].ravel() * sensing_range,
                               rel_speeds=blocks[:, [1, 3]].ravel() * v_desired,
                               lane_change_freq=float(lane_change_frequency(lc_history[e])[0])))
    return obs


def epsilon_neighbors(positions, ego: int, eps: float, ring_length: float | None = None) -> set[int]:
    """Indices ``j != ego`` within distance ``eps``.

    ``positions`` is ``(N,)`` longitudinal or ``(N, 2)`` planar; the
    longitudinal coordinate is measured as ring arc length when
    ``ring_length`` is given.
    """
    P = np.asarray(positions, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    dx = P[:, 0] - P[ego, 0]
    if ring_length is not None:
        d = arc_forward(P[ego, 0], P[:, 0], ring_length)
        dx = np.minimum(d, ring_length - d)
    d2 = dx**2 + np.sum((P[:, 1:] - P[ego, 1:]) ** 2, axis=1)
    mask = d2 <= eps**2
    mask[ego] = False
    return set(np.flatnonzero(mask).tolist())


def epsilon_neighbor_matrix(px, eps: float, ring_length: float) -> np.ndarray:
    d = arc_forward(px[:, None], px[None, :], ring_length)
    d = np.minimum(d, ring_length - d)
    mask = d <= eps
    np.fill_diagonal(mask, False)
    return mask


def shared_avg_velocity(neighbor_speeds, neighbor_lanes, lane: int, ego_speed: float) -> float:
    """Mean speed of neighbours on ``lane``; the ego's own speed if there are none."""
    speeds = np.asarray(neighbor_speeds, dtype=float)
    on_lane = np.asarray(neighbor_lanes, dtype=int) == lane
    return float(speeds[on_lane].mean()) if np.any(on_lane) else float(ego_speed)


def shared_info_batch(egos, px, speeds, lanes, is_cav, eps: float, ring_length: float, n_lanes: int,
                      extra_pos=(), extra_lane=()) -> np.ndarray:
    """``M(k, l)`` for (left, own, right) lanes of each ego, raw speed units.

    ``extra_pos``/``extra_lane`` are zero-speed shared items such as known
    closures.
    """
    egos = np.asarray(egos, dtype=int)
    px_all = np.concatenate([px, np.asarray(extra_pos, dtype=float)])
    sp_all = np.concatenate([speeds, np.zeros(len(extra_pos))])
    ln_all = np.concatenate([lanes, np.asarray(extra_lane, dtype=int)])
    cav_all = np.concatenate([is_cav, np.ones(len(extra_pos), dtype=bool)])
    d = arc_forward(px[egos, None], px_all[None, :], ring_length)
    d = np.minimum(d, ring_length - d)
    nb = (d <= eps) & cav_all[None, :]
    nb[np.arange(len(egos)), egos] = False
    side, exists = side_lanes(lanes[egos], n_lanes)
    out = np.empty((len(egos), 3))
    for s in range(3):
        member = nb & (ln_all[None, :] == side[:, s][:, None])
        cnt = member.sum(axis=1)
        tot = (member * sp_all[None, :]).sum(axis=1)
        mean = np.where(cnt > 0, tot / np.maximum(cnt, 1), speeds[egos])
        out[:, s] = np.where(exists[:, s], mean, ABSENT_LANE)
    return out


def normalize_shared(m, v_desired: float) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.where(m == ABSENT_LANE, ABSENT_LANE, m / v_desired)
