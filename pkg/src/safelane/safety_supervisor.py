"""Feedback process: vet the proposed action with the CBF-QP and substitute a safe one.

Safe set per vehicle is a polytope in its own state ``[p_x, p_y, psi, v]``:

* front gap to the leader in every lane the manoeuvre touches,
  ``h = gap - d_min - tau * v``;
* rear gap to the follower in a lane being entered,
  ``h = gap - d_min - tau * v_follower``;
* lateral band over the touched lanes, with a heading look-ahead so steering
  can act on it: ``h = p_y - y_lo + c psi`` and ``h = y_hi - p_y - c psi``.

Neighbour motion enters the offsets (``q`` now, ``q_next`` one tick ahead).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cbf_qp
from .cbf_qp import AffineBarrier
from .dynamics import PSI, PX, PY, V, BicycleParams, ControlInput, InputBox, f_bicycle, g_bicycle
from .reference_planner import ACTIONS, N_ACTIONS, Action
from .traffic_env.road import Entities, NeighborTable, RoadConfig, neighbor_table

ES = -1


@dataclass(frozen=True)
class SupervisorParams:
    d_min: float = 2.0
    tau: float = 1.5
    eta: float = 0.005
    lateral_margin: float = 0.3
    heading_lookahead: float = 1.0
    big_m: float = cbf_qp.DEFAULT_BIG_M
    sensing_range: float = 100.0
    W: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    es_lateral_gain: float = 0.05
    es_heading_gain: float = 0.5

    def __post_init__(self):
        if self.d_min <= 0 or self.tau < 0:
            raise ValueError("d_min must be positive and tau non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")


@dataclass
class Scene:
    """Immutable snapshot shared by every vehicle within one control tick."""

    X: np.ndarray
    lane: np.ndarray
    road: RoadConfig
    ent: Entities = None
    table: NeighborTable = None
    sensing_range: float = 100.0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.lane = np.asarray(self.lane, dtype=int)
        if self.ent is None:
            self.ent = Entities.build(self.X, self.lane, self.road)
        if self.table is None:
            self.table = neighbor_table(self.ent, self.road.length, self.sensing_range)


@dataclass
class BarrierBatch:
    """Barriers for ``B`` (vehicle, action) requests, ``K`` slots each."""

    P: np.ndarray
    q: np.ndarray
    q_next: np.ndarray
    noise: np.ndarray
    mask: np.ndarray
    eta: float
    names: tuple[str, ...] = field(default_factory=tuple)

    def rows(self, X, bike: BicycleParams, robust: bool = True):
        f = f_bicycle(X, bike)
        g = g_bicycle(X, bike)
        A = np.einsum("bks,bsm->bkm", self.P, g)
        h = np.einsum("bks,bs->bk", self.P, X) + self.q
        c = (1.0 - self.eta) * h - np.einsum("bks,bs->bk", self.P, f) - self.q_next
        if robust:
            c = c + self.noise
        return A, c

    def barriers(self, b: int) -> list[AffineBarrier]:
        return [AffineBarrier(self.P[b, k], self.q[b, k], self.eta, self.q_next[b, k], name=self.names[k])
                for k in range(self.P.shape[1]) if self.mask[b, k]]


def target_lanes(lane, action, n_lanes: int):
    """Target lane per request and whether the action exists on this road."""
    shift = np.choose(np.asarray(action, dtype=int), [0, 1, -1])
    tgt = np.asarray(lane, dtype=int) + shift
    ok = (tgt >= 0) & (tgt < n_lanes)
    return np.clip(tgt, 0, n_lanes - 1), ok


def barrier_batch(scene: Scene, ego, action, params: SupervisorParams, bike: BicycleParams,
                  box: InputBox) -> BarrierBatch:
    """Barrier slots for each ``(ego[b], action[b])`` request.

    ``action`` is interpreted relative to the vehicle's assigned lane; KL
    keeps whatever lanes the vehicle already occupies.
    """
    ego = np.atleast_1d(np.asarray(ego, dtype=int))
    action = np.broadcast_to(np.asarray(action, dtype=int), ego.shape)
    road, ent, tab = scene.road, scene.ent, scene.table
    n_lanes = road.lanes
    B = len(ego)
    K = n_lanes + 3
    X = scene.X[ego]
    tgt, _ = target_lanes(scene.lane[ego], action, n_lanes)
    occ = ent.occ[ego].copy()
    entering = ~occ[np.arange(B), tgt]
    occ[np.arange(B), tgt] = True

    W = np.asarray(params.W, dtype=float)
    P = np.zeros((B, K, 4))
    q = np.zeros((B, K))
    q_next = np.zeros((B, K))
    noise = np.zeros((B, K))
    mask = np.zeros((B, K), dtype=bool)
    Ts = bike.Ts

    # front gaps, one slot per lane
    for lane in range(n_lanes):
        j = tab.lead_idx[ego, lane]
        has = occ[:, lane] & (j >= 0)
        jj = np.where(has, j, 0)
        half = 0.5 * (ent.length[ego] + ent.length[jj])
        q_l = X[:, PX] + np.where(has, tab.lead_dist[ego, lane], 0.0) - half - params.d_min
        P[:, lane] = [-1.0, 0.0, 0.0, -params.tau]
        q[:, lane] = q_l
        q_next[:, lane] = q_l + ent.speed[jj] * ent.cos_psi[jj] * Ts
        lead_noise = np.where(jj < ent.n_veh, W[PX], 0.0)
        noise[:, lane] = W[PX] + params.tau * W[V] + lead_noise
        mask[:, lane] = has

    # rear gap in a lane being entered
    r = n_lanes
    j = tab.follow_idx[ego, tgt]
    has = entering & (j >= 0)
    jj = np.where(has, j, 0)
    half = 0.5 * (ent.length[ego] + ent.length[jj])
    p_f = X[:, PX] - np.where(has, tab.follow_dist[ego, tgt], 0.0)
    v_f = ent.speed[jj]
    P[:, r] = [1.0, 0.0, 0.0, 0.0]
    q[:, r] = -p_f - half - params.d_min - params.tau * v_f
    moving = jj < ent.n_veh
    q_next[:, r] = q[:, r] - v_f * ent.cos_psi[jj] * Ts - np.where(moving, params.tau * box.a_max * Ts, 0.0)
    noise[:, r] = W[PX] + np.where(moving, W[PX] + params.tau * W[V], 0.0)
    mask[:, r] = has

    # lateral band over all touched lanes
    lanes_idx = np.arange(n_lanes)
    lo_lane = np.min(np.where(occ, lanes_idx, n_lanes), axis=1)
    hi_lane = np.max(np.where(occ, lanes_idx, -1), axis=1)
    y_lo = lo_lane * road.lane_width + params.lateral_margin
    y_hi = (hi_lane + 1) * road.lane_width - params.lateral_margin
    c = params.heading_lookahead
    P[:, r + 1] = [0.0, 1.0, c, 0.0]
    q[:, r + 1] = -y_lo
    P[:, r + 2] = [0.0, -1.0, -c, 0.0]
    q[:, r + 2] = y_hi
    q_next[:, r + 1:] = q[:, r + 1:]
    lat_noise = W[PY] + c * W[PSI]
    noise[:, r + 1:] = lat_noise
    mask[:, r + 1:] = True

    names = tuple(f"front_lane{k}" for k in range(n_lanes)) + ("rear", "lateral_lo", "lateral_hi")
    return BarrierBatch(P=P, q=q, q_next=q_next, noise=noise, mask=mask, eta=params.eta, names=names)


def build_barriers(scene: Scene, ego: int, action: Action, params: SupervisorParams = SupervisorParams(),
                   bike: BicycleParams = BicycleParams(), box: InputBox = InputBox()) -> list[AffineBarrier]:
    return barrier_batch(scene, [ego], [int(action)], params, bike, box).barriers(0)


def input_bounds(X, box: InputBox, Ts: float):
    """Per-vehicle input box; braking is capped so speed cannot go negative within a tick."""
    X = np.atleast_2d(X)
    lo = np.tile(box.lower, (len(X), 1))
    hi = np.tile(box.upper, (len(X), 1))
    lo[:, 1] = np.minimum(np.maximum(box.a_min, -X[:, V] / Ts), 0.0)
    return lo, hi


def solve_requests(scene: Scene, ego, action, u_ref, params: SupervisorParams, bike: BicycleParams,
                   box: InputBox, *, relaxed: bool):
    """Batched CBF-QP for ``(ego, action)`` requests; rows are noise-tightened."""
    ego = np.atleast_1d(np.asarray(ego, dtype=int))
    bb = barrier_batch(scene, ego, action, params, bike, box)
    X = scene.X[ego]
    A, c = bb.rows(X, bike, robust=True)
    lo, hi = input_bounds(X, box, bike.Ts)
    return cbf_qp.solve_batch(A, c, u_ref, lo, hi, relaxed=relaxed, big_m=params.big_m, row_mask=bb.mask)


def feasibility_matrix(scene: Scene, egos, params: SupervisorParams, bike: BicycleParams,
                       box: InputBox) -> np.ndarray:
    """Admissibility of every action for every ego, shape ``(N, 3)``.

    An action is admissible when its strict QP is feasible.  A lane change
    additionally needs the current state inside its safe set: the decay
    condition alone would accept a start with ``h < 0`` that only improves.
    Feasibility of the strict problem does not depend on the reference, so
    the references are zero here.
    """
    egos = np.atleast_1d(np.asarray(egos, dtype=int))
    n = len(egos)
    ego_rep = np.repeat(egos, N_ACTIONS)
    act_rep = np.tile(np.arange(N_ACTIONS), n)
    _, ok = target_lanes(scene.lane[ego_rep], act_rep, scene.road.lanes)
    bb = barrier_batch(scene, ego_rep, act_rep, params, bike, box)
    X = scene.X[ego_rep]
    A, c = bb.rows(X, bike, robust=True)
    lo, hi = input_bounds(X, box, bike.Ts)
    _, _, feas, _ = cbf_qp.solve_batch(A, c, np.zeros((len(ego_rep), 2)), lo, hi, relaxed=False,
                                       big_m=params.big_m, row_mask=bb.mask)
    h = np.einsum("bks,bs->bk", bb.P, X) + bb.q
    inside = np.all(np.where(bb.mask, h, 0.0) >= -cbf_qp.FEAS_TOL, axis=1)
    ok &= (act_rep == int(Action.KL)) | inside
    return (feas & ok).reshape(n, N_ACTIONS)


def search_order(proposed: int, q_values) -> list[int]:
    """Proposed action first, then the rest by descending Q (ties: KL, CL, CR)."""
    rest = [a for a in range(N_ACTIONS) if a != proposed]
    rest.sort(key=lambda a: (-float(q_values[a]), a))
    return [int(proposed)] + rest


def choose_feedback(proposed, q_values, feasible) -> np.ndarray:
    """Feedback actions for a batch; ``ES`` (-1) when nothing is feasible."""
    proposed = np.atleast_1d(np.asarray(proposed, dtype=int))
    q_values = np.atleast_2d(q_values)
    if not np.all(np.isfinite(q_values)):
        raise ValueError("non-finite action values")
    feasible = np.atleast_2d(feasible)
    out = np.full(len(proposed), ES, dtype=int)
    for i, a in enumerate(proposed):
        for cand in search_order(int(a), q_values[i]):
            if feasible[i, cand]:
                out[i] = cand
                break
    return out


def emergency_stop(x, lane_center: float, box: InputBox = InputBox(), params: SupervisorParams = SupervisorParams(),
                   Ts: float = 0.01) -> ControlInput:
    """Full braking with proportional steering back to the lane centre; standstill holds."""
    x = np.asarray(x, dtype=float)
    return ControlInput(*emergency_stop_batch(x[None], np.array([lane_center]), box, params, Ts)[0])


def emergency_stop_batch(X, lane_center, box: InputBox, params: SupervisorParams, Ts: float) -> np.ndarray:
    X = np.atleast_2d(X)
    steer = -params.es_lateral_gain * (X[:, PY] - lane_center) - params.es_heading_gain * X[:, PSI]
    steer = np.clip(steer, -box.tan_delta_max, box.tan_delta_max)
    accel = np.maximum(box.a_min, -X[:, V] / Ts)
    stopped = X[:, V] <= 0.0
    return np.stack([np.where(stopped, 0.0, steer), np.where(stopped, 0.0, accel)], axis=-1)


@dataclass
class FeedbackResult:
    executed_action: int
    control: ControlInput
    overridden: bool
    es: bool
    zeta: float = 0.0


def feedback_action(proposed: Action, q_values, scene: Scene, ego: int, u_refs,
                    params: SupervisorParams = SupervisorParams(), bike: BicycleParams = BicycleParams(),
                    box: InputBox = InputBox()) -> FeedbackResult:
    """Single-vehicle feedback process.

    ``u_refs`` is a ``(2, 3)`` reference matrix (columns KL, CL, CR).  The
    accepted action's control comes from the relaxed, noise-tightened QP.
    """
    feas = feasibility_matrix(scene, [ego], params, bike, box)[0]
    a_fb = int(choose_feedback([int(proposed)], [q_values], [feas])[0])
    x = scene.X[ego]
    if a_fb == ES:
        center = float(scene.road.geometry.center(scene.lane[ego]))
        return FeedbackResult(ES, emergency_stop(x, center, box, params, bike.Ts), overridden=True, es=True)
    u_refs = np.asarray(u_refs, dtype=float)
    u, z, _, _ = solve_requests(scene, [ego], [a_fb], u_refs[:, a_fb][None], params, bike, box, relaxed=True)
    return FeedbackResult(a_fb, ControlInput(*u[0]), overridden=a_fb != int(proposed), es=False, zeta=float(z[0]))


ACTION_NAMES = {int(a): a.name for a in ACTIONS} | {ES: "ES"}
