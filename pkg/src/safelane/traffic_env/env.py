"""Two-rate ring-road simulation: lane decisions at the epoch rate, control at the tick rate.

At the start of every epoch learning vehicles propose an action, the
supervisor vets it (feedback mode) and a lane change is committed by moving
the vehicle's assigned lane.  During the following ticks every vehicle tracks
its reference trajectory: learning vehicles through the relaxed, noise-robust
CBF-QP (or the raw reference in vanilla mode), baseline vehicles through IDM
with reference steering.  All vehicles read one snapshot per tick and move
simultaneously.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import safety_supervisor as sup
from ..agent.observation import OBS_DIM, SHARED_DIM, normalize_shared, observe_batch, shared_info_batch
from ..cbf_qp import QpTrace
from ..dynamics import PSI, PX, PY, V, BicycleParams, InputBox, step_noisy
from ..reference_planner import (N_ACTIONS, Action, PlannerParams, TrackingGains, hold_plan, lateral_plan,
                                 tracking_reference)
from .idm import GapAcceptanceParams, IdmParams, gap_acceptance_change, idm_accel, lane_change_safe
from .metrics import EpochRecord, comfort_single, reward, traffic_flow
from .road import RoadConfig, headway_metrics

RL, IDM = 0, 1


def _action_name(a) -> str:
    return "ES" if int(a) == sup.ES else Action(int(a)).name


POPULATIONS = ("all_rl", "all_idm", "mixed")


class PackingError(ValueError):
    """The requested vehicle count does not fit on the road with the minimum spacing."""


@dataclass(frozen=True)
class EnvConfig:
    road: RoadConfig = RoadConfig()
    n_vehicles: int = 60
    population: str = "all_rl"
    rl_fraction: float = 0.5
    feedback: bool = True
    ticks_per_epoch: int = 50
    reward_weight: float = 1.0
    comfort_theta: float = 1.0
    lane_change_window: int = 10
    comm_range: float = 100.0
    noise_W: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    init_speed_range: tuple[float, float] = (0.8, 1.0)
    init_max_closing: float = 10.0
    bicycle: BicycleParams = BicycleParams()
    box: InputBox = InputBox()
    supervisor: sup.SupervisorParams = sup.SupervisorParams()
    planner: PlannerParams = PlannerParams()
    idm: IdmParams = IdmParams()
    gap: GapAcceptanceParams = GapAcceptanceParams()
    tracking: TrackingGains = TrackingGains()

    def __post_init__(self):
        if self.population not in POPULATIONS:
            raise ValueError(f"population must be one of {POPULATIONS}, got {self.population!r}")
        if self.n_vehicles < 1 or self.ticks_per_epoch < 1 or self.lane_change_window < 1:
            raise ValueError("n_vehicles, ticks_per_epoch and lane_change_window must be positive")
        if not 0.0 <= self.rl_fraction <= 1.0:
            raise ValueError("rl_fraction must lie in [0, 1]")

    @property
    def bike(self) -> BicycleParams:
        return replace(self.bicycle, road_length=self.road.length)

    @property
    def sup_params(self) -> sup.SupervisorParams:
        return replace(self.supervisor, W=tuple(self.noise_W))


@dataclass
class SimState:
    X: np.ndarray
    lane: np.ndarray
    kind: np.ndarray
    maneuver_left: np.ndarray
    lc_history: np.ndarray
    plan: np.ndarray
    plan_T: np.ndarray
    plan_elapsed: np.ndarray
    k: int = 0
    t: int = 0

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def rl_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kind == RL)

    @property
    def idm_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kind == IDM)


@dataclass
class EpochOutcome:
    record: EpochRecord
    reward: float
    proposed: np.ndarray
    executed: np.ndarray
    o2: np.ndarray
    m2: np.ndarray
    collision: bool
    overridden: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def _pack_interval(count: int, length: float, pitch: float, rng: np.random.Generator) -> np.ndarray:
    """Offsets of ``count`` items with pitch ``pitch`` in ``[0, length)``, uniform over layouts."""
    slack = length - count * pitch
    if slack < 0:
        raise PackingError(f"{count} vehicles need {count * pitch:.1f} but only {length:.1f} is free")
    cuts = np.sort(rng.uniform(0.0, slack, size=count))
    return cuts + pitch * np.arange(count)


def lane_capacity(road: RoadConfig, lane: int, d_min: float) -> int:
    pitch = road.vehicle_length + d_min
    blocked = sum(c.length + pitch for c in road.closures if c.lane == lane)
    return max(int(np.floor((road.length - blocked) / pitch)), 0)


def init_scene(cfg: EnvConfig, rng: np.random.Generator) -> SimState:
    """Random non-overlapping placement with bumper gaps of at least ``d_min``.

    Speeds start at ``v0 * U(lo, hi)`` and are capped so every front-gap
    barrier starts non-negative.
    """
    road, d_min, tau = cfg.road, cfg.supervisor.d_min, cfg.supervisor.tau
    n = cfg.n_vehicles
    caps = np.array([lane_capacity(road, l, d_min) for l in range(road.lanes)])
    if n > caps.sum():
        raise PackingError(f"{n} vehicles exceed road capacity {caps.sum()} at minimum spacing {d_min}")
    # near-even split across lanes, respecting per-lane capacity
    counts = np.zeros(road.lanes, dtype=int)
    for _ in range(n):
        room = counts < caps
        least = np.flatnonzero(room & (counts == counts[room].min()))
        counts[rng.choice(least)] += 1

    pitch = road.vehicle_length + d_min
    pos, lanes = [], []
    for l in range(road.lanes):
        closures = sorted((c for c in road.closures if c.lane == l), key=lambda c: c.start)
        if not closures:
            off = _pack_interval(counts[l], road.length, pitch, rng)
            pos.append(np.mod(off + rng.uniform(0.0, road.length), road.length))
        else:
            # free arcs between consecutive closures, vehicles kept d_min clear of each end
            arcs = []
            for a, b in zip(closures, closures[1:] + closures[:1]):
                start = a.end + d_min
                end = b.start + (road.length if b.start <= a.start else 0.0)
                arcs.append((start, end - start))
            free = np.array([max(length, 0.0) for _, length in arcs])
            share = np.floor(free / pitch).astype(int)
            alloc = np.zeros(len(arcs), dtype=int)
            for _ in range(counts[l]):
                room = alloc < share
                alloc[rng.choice(np.flatnonzero(room))] += 1
            for (start, length), c_arc in zip(arcs, alloc):
                off = _pack_interval(c_arc, length, pitch, rng)
                pos.append(np.mod(start + 0.5 * road.vehicle_length + off, road.length))
        lanes.append(np.full(counts[l], l))
    px = np.concatenate(pos)
    lane = np.concatenate(lanes).astype(int)
    order = np.lexsort((px, lane))
    px, lane = px[order], lane[order]

    X = np.zeros((n, 4))
    X[:, PX] = px
    X[:, PY] = road.geometry.center(lane)
    lo, hi = cfg.init_speed_range
    X[:, V] = cfg.idm.v0 * rng.uniform(lo, hi, size=n)

    kind = np.full(n, RL if cfg.population == "all_rl" else IDM)
    if cfg.population == "mixed":
        n_rl = int(round(cfg.rl_fraction * n))
        kind[rng.permutation(n)[:n_rl]] = RL

    state = SimState(X=X, lane=lane, kind=kind, maneuver_left=np.zeros(n),
                     lc_history=np.zeros((n, cfg.lane_change_window), dtype=np.int8),
                     plan=hold_plan(X[:, PY]), plan_T=np.full(n, cfg.planner.lane_change_duration),
                     plan_elapsed=np.full(n, cfg.planner.lane_change_duration))
    scene = sup.Scene(X, lane, road, sensing_range=np.inf)
    gaps = np.where(scene.ent.occ[:n], scene.table.lead_gap, np.inf)
    which = np.argmin(gaps, axis=1)
    gap = gaps[np.arange(n), which]
    lead = scene.table.lead_idx[np.arange(n), which]
    if np.any(gap < d_min - 1e-9):
        raise PackingError("initial placement violates the minimum spacing")
    if tau > 0:
        X[:, V] = np.minimum(X[:, V], np.maximum(gap - d_min, 0.0) / tau)
    # closing speeds the front-gap barrier can absorb at full braking; propagate upstream
    max_closing = cfg.init_max_closing
    lead_speed = np.concatenate([X[:, V], np.zeros(len(road.closures))])
    for _ in range(n + 1):
        lead_speed[:n] = X[:, V]
        cap = np.where(lead >= 0, lead_speed[np.maximum(lead, 0)] + max_closing, np.inf)
        if np.all(X[:, V] <= cap):
            break
        X[:, V] = np.minimum(X[:, V], cap)
    return state


class TrafficEnv:
    """Ring-road world; ``reset`` then alternate ``observe`` and ``run_epoch``."""

    def __init__(self, cfg: EnvConfig, trace: QpTrace | None = None):
        self.cfg = cfg
        self.bike = cfg.bike
        self.sp = cfg.sup_params
        self.trace = trace
        self.state: SimState | None = None
        self.scene: sup.Scene | None = None
        self.noise_rng: np.random.Generator | None = None
        self.episode = 0

    # setup -------------------------------------------------------------------

    def reset(self, scene_rng: np.random.Generator, noise_rng: np.random.Generator, episode: int = 0):
        self.state = init_scene(self.cfg, scene_rng)
        self.noise_rng = noise_rng
        self.episode = episode
        self._rescene()
        return self.observe()

    def _rescene(self):
        s = self.state
        self.scene = sup.Scene(s.X, s.lane, self.cfg.road, sensing_range=np.inf)

    # observation -------------------------------------------------------------

    def observe(self):
        """Normalised ``(o, m)`` rows for the learning vehicles."""
        s, cfg = self.state, self.cfg
        ids = s.rl_ids
        if len(ids) == 0:
            return np.zeros((0, OBS_DIM)), np.zeros((0, SHARED_DIM))
        road = cfg.road
        o = observe_batch(ids, s.X, s.lane, self.scene.ent, self.scene.table, s.lc_history,
                          self.sp.sensing_range, cfg.planner.v_desired, road.lanes)
        m = shared_info_batch(ids, s.X[:, PX], s.X[:, V], s.lane, s.kind == RL, cfg.comm_range, road.length,
                              road.lanes, extra_pos=[c.start for c in road.closures],
                              extra_lane=[c.lane for c in road.closures])
        return o, normalize_shared(m, cfg.planner.v_desired)

    def available_actions(self, ids) -> np.ndarray:
        """Actions whose target lane exists and is adjacent to the lane under the vehicle."""
        s = self.state
        ids = np.asarray(ids, dtype=int)
        here = self.cfg.road.geometry.lane_of(s.X[ids, PY])
        out = np.zeros((len(ids), N_ACTIONS), dtype=bool)
        for a in range(N_ACTIONS):
            tgt, ok = sup.target_lanes(s.lane[ids], np.full(len(ids), a), self.cfg.road.lanes)
            out[:, a] = ok & (np.abs(tgt - here) <= 1)
        return out

    # decisions ---------------------------------------------------------------

    def _decide_rl(self, proposed, q_values):
        """Feedback actions, with lane changes committed one at a time.

        Every vehicle is vetted against the epoch snapshot; a vehicle whose
        change would follow an already committed one is re-vetted against the
        updated lanes so two vehicles never merge into the same gap.
        """
        s, cfg = self.state, self.cfg
        ids = s.rl_ids
        proposed = np.asarray(proposed, dtype=int)
        avail = self.available_actions(ids)
        if not cfg.feedback:
            executed = np.where(avail[np.arange(len(ids)), proposed], proposed, int(Action.KL))
            changed = self._commit(ids, executed)
            return executed, changed
        feas = sup.feasibility_matrix(self.scene, ids, self.sp, self.bike, cfg.box) & avail
        executed = sup.choose_feedback(proposed, q_values, feas)
        changed = np.zeros(len(ids), dtype=bool)
        dirty = False
        for i in np.flatnonzero((executed == int(Action.CL)) | (executed == int(Action.CR))):
            if dirty:
                self._rescene()
                row = sup.feasibility_matrix(self.scene, ids[i:i + 1], self.sp, self.bike, cfg.box)[0]
                executed[i] = sup.choose_feedback(proposed[i:i + 1], q_values[i:i + 1], (row & avail[i])[None])[0]
            changed[i] = self._commit(ids[i:i + 1], executed[i:i + 1])[0]
            dirty |= bool(changed[i])
        if dirty:
            self._rescene()
        return executed, changed

    def _decide_idm(self):
        """Gap-acceptance lane changes for idle baseline vehicles, committed sequentially."""
        s, cfg = self.state, self.cfg
        ids = s.idm_ids[s.maneuver_left[s.idm_ids] <= 0]
        action = np.zeros(len(ids), dtype=int)
        if len(ids) == 0:
            return ids, action
        want = self._gap_accept(ids)
        dirty = False
        for i in np.flatnonzero(want):
            a = want[i] if not dirty else self._gap_accept(ids[i:i + 1])[0]
            if a:
                self._commit(ids[i:i + 1], np.array([a]))
                action[i] = a
                self._rescene()
                dirty = True
        return ids, action

    def _gap_accept(self, ids) -> np.ndarray:
        s, tab, ent, cfg = self.state, self.scene.table, self.scene.ent, self.cfg
        cur = tab.lead_gap[ids, s.lane[ids]]
        v = s.X[ids, V]
        action = np.zeros(len(ids), dtype=int)
        for a in (Action.CL, Action.CR):
            tgt, ok = sup.target_lanes(s.lane[ids], np.full(len(ids), int(a)), cfg.road.lanes)
            front, rear = tab.lead_gap[ids, tgt], tab.follow_gap[ids, tgt]
            v_lead = np.where(tab.lead_idx[ids, tgt] >= 0, ent.speed[np.maximum(tab.lead_idx[ids, tgt], 0)], v)
            v_fol = np.where(tab.follow_idx[ids, tgt] >= 0, ent.speed[np.maximum(tab.follow_idx[ids, tgt], 0)], v)
            go = ok & (action == 0) & gap_acceptance_change(cur, front, rear, cfg.gap)
            go &= lane_change_safe(v, v_lead, front, v_fol, rear, cfg.idm, cfg.gap)
            action = np.where(go, int(a), action)
        return action

    def _commit(self, ids, action) -> np.ndarray:
        s = self.state
        action = np.asarray(action, dtype=int)
        change = (action == int(Action.CL)) | (action == int(Action.CR))
        tgt, _ = sup.target_lanes(s.lane[ids], np.where(change, action, 0), self.cfg.road.lanes)
        moved = ids[change]
        T = self.cfg.planner.lane_change_duration
        s.lane[moved] = tgt[change]
        s.maneuver_left[moved] = T
        s.plan[moved] = lateral_plan(s.X[moved], self.cfg.road.geometry.center(s.lane[moved]), T)
        s.plan_T[moved] = T
        s.plan_elapsed[moved] = 0.0
        return change

    # control -----------------------------------------------------------------

    def _references(self) -> np.ndarray:
        s, cfg = self.state, self.cfg
        return tracking_reference(s.X, s.plan, s.plan_T, s.plan_elapsed, track_speed=s.maneuver_left <= 0,
                                  params=cfg.planner, wheelbase=self.bike.L, Ts=self.bike.Ts, box=cfg.box,
                                  gains=cfg.tracking)

    def _controls(self, u_ref, rl_ids, es_mask):
        s, cfg = self.state, self.cfg
        U = u_ref.copy()
        lo, hi = sup.input_bounds(s.X, cfg.box, self.bike.Ts)
        zeta = np.zeros(s.n)
        if len(rl_ids):
            if cfg.feedback:
                es_ids = rl_ids[es_mask]
                qp_ids = rl_ids[~es_mask]
                if len(es_ids):
                    U[es_ids] = sup.emergency_stop_batch(s.X[es_ids], cfg.road.geometry.center(s.lane[es_ids]),
                                                         cfg.box, self.sp, self.bike.Ts)
                if len(qp_ids):
                    u, z, feas, obj = sup.solve_requests(self.scene, qp_ids, np.zeros(len(qp_ids), dtype=int),
                                                         u_ref[qp_ids], self.sp, self.bike, cfg.box, relaxed=True)
                    U[qp_ids] = u
                    zeta[qp_ids] = z
                    if self.trace is not None:
                        for i, v in enumerate(qp_ids):
                            self.trace.log(s.t, int(v), "KL", bool(feas[i]), float(z[i]), float(obj[i]),
                                           epoch=s.k)
            else:
                U[rl_ids] = np.clip(u_ref[rl_ids], lo[rl_ids], hi[rl_ids])
        ids = s.idm_ids
        if len(ids):
            tab, ent = self.scene.table, self.scene.ent
            occ = ent.occ[ids]
            gaps = np.where(occ, tab.lead_gap[ids], np.inf)
            which = np.argmin(gaps, axis=1)
            gap = gaps[np.arange(len(ids)), which]
            lead = tab.lead_idx[ids, which]
            v_lead = np.where(lead >= 0, ent.speed[np.maximum(lead, 0)], s.X[ids, V])
            acc = idm_accel(s.X[ids, V], v_lead, gap, cfg.idm, cfg.box)
            U[ids, 1] = np.clip(acc, lo[ids, 1], hi[ids, 1])
        return U, zeta

    # epoch -------------------------------------------------------------------

    def run_epoch(self, proposed=(), q_values=None) -> EpochOutcome:
        """Advance one decision epoch; ``proposed`` holds one action per learning vehicle."""
        s, cfg = self.state, self.cfg
        rl_ids = s.rl_ids
        proposed = np.asarray(proposed, dtype=int).reshape(-1)
        if len(proposed) != len(rl_ids):
            raise ValueError(f"expected {len(rl_ids)} proposals, got {len(proposed)}")
        if q_values is None:
            q_values = np.zeros((len(rl_ids), N_ACTIONS))

        changed = np.zeros(s.n, dtype=bool)
        executed = np.zeros(0, dtype=int)
        if len(rl_ids):
            executed, changed[rl_ids] = self._decide_rl(proposed, q_values)
        es_mask = executed == sup.ES
        overridden = (executed != proposed) if cfg.feedback else np.zeros(len(rl_ids), dtype=bool)
        if self.trace is not None and cfg.feedback:
            for v, a, p in zip(rl_ids, executed, proposed):
                self.trace.log(s.t, int(v), _action_name(a), a != sup.ES, float("nan"), float("nan"),
                               proposed=_action_name(p), epoch=s.k)
        action_code = np.zeros(s.n, dtype=int)
        action_code[rl_ids] = executed
        idm_ids, idm_action = self._decide_idm()
        changed[idm_ids] = idm_action != 0
        action_code[idm_ids] = idm_action
        s.lc_history = np.roll(s.lc_history, 1, axis=1)
        s.lc_history[:, 0] = changed
        self._rescene()

        speed_sum = 0.0
        abs_acc = np.zeros(s.n)
        min_hw = np.inf
        mean_hw = []
        max_zeta = 0.0
        ticks = 0
        collision = False
        for _ in range(cfg.ticks_per_epoch):
            u_ref = self._references()
            U, zeta = self._controls(u_ref, rl_ids, es_mask)
            max_zeta = max(max_zeta, float(np.max(zeta, initial=0.0)))
            s.X = step_noisy(s.X, U, self.bike, cfg.noise_W, self.noise_rng)
            s.X[:, V] = np.maximum(s.X[:, V], 0.0)
            s.maneuver_left = np.maximum(s.maneuver_left - self.bike.Ts, 0.0)
            s.plan_elapsed = s.plan_elapsed + self.bike.Ts
            s.t += 1
            ticks += 1
            self._rescene()
            hw = headway_metrics(self.scene.ent, cfg.road.length, self.scene.table)
            speed_sum += float(s.X[:, V].mean())
            abs_acc += np.abs(U[:, 1])
            min_hw = min(min_hw, hw["min_headway"])
            mean_hw.append(hw["mean_headway"])
            if hw["min_headway"] < 0:
                collision = True
                break
        s.k += 1

        v_bar = speed_sum / ticks
        F = traffic_flow(s.n, cfg.road.length, v_bar)
        comfort = comfort_single(abs_acc / ticks, action_code, theta=cfg.comfort_theta)
        C = float(np.mean(comfort))
        r = reward(F, C, cfg.reward_weight)
        rec = EpochRecord(episode=self.episode, epoch=s.k - 1, F=F, C=C, reward=r, min_headway=float(min_hw),
                          overrides=int(overridden.sum()), es_count=int(es_mask.sum()), mean_speed=v_bar,
                          mean_headway=float(np.nanmean(mean_hw)) if np.any(np.isfinite(mean_hw)) else float("nan"),
                          lane_changes=int(changed.sum()), max_zeta=max_zeta, collision=collision)
        o2, m2 = self.observe()
        return EpochOutcome(record=rec, reward=r, proposed=proposed, executed=executed, o2=o2, m2=m2,
                            collision=collision, overridden=overridden)
