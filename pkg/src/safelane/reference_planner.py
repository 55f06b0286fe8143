"""Per-action trajectories and the control references that track them.

Lanes are numbered from the right, lane ``l`` spans ``[l w, (l+1) w)`` in
``p_y`` and "left" means ``l + 1`` (positive heading turns left).

Lateral motion is a quintic from the current lateral state to the target lane
centre with zero lateral velocity and acceleration at the end.  Longitudinal
motion tracks the desired speed proportionally for KL and keeps the speed
constant while changing lanes.  References come from the endogenous
transformation: ``accel = d|sigma_dot|/dt`` and ``tan_delta = L * curvature``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dynamics import PSI, PX, PY, V, InputBox


class Action(enum.IntEnum):
    KL = 0
    CL = 1
    CR = 2


ACTIONS = (Action.KL, Action.CL, Action.CR)
N_ACTIONS = len(ACTIONS)


class InvalidActionError(ValueError):
    pass


class DegenerateTrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class LaneGeometry:
    n_lanes: int = 3
    lane_width: float = 3.5

    def center(self, lane):
        return (np.asarray(lane, dtype=float) + 0.5) * self.lane_width

    def lane_of(self, p_y):
        lane = np.floor(np.asarray(p_y, dtype=float) / self.lane_width).astype(int)
        return np.clip(lane, 0, self.n_lanes - 1)

    def target_lane(self, lane: int, action: Action) -> int:
        tgt = lane + {Action.KL: 0, Action.CL: 1, Action.CR: -1}[Action(action)]
        if not 0 <= tgt < self.n_lanes:
            raise InvalidActionError(f"{Action(action).name} from lane {lane} leaves the road")
        return tgt


@dataclass(frozen=True)
class PlannerParams:
    lane_change_duration: float = 4.0
    speed_gain: float = 0.5
    v_desired: float = 30.0
    v_eps: float = 0.1
    min_lateral_horizon: float = 0.5


@dataclass
class TrajectorySample:
    sigma: np.ndarray
    sigma_dot: np.ndarray
    sigma_ddot: np.ndarray


def quintic_coeffs(y0, dy0, ddy0, yT, T):
    """Coefficients ``c0..c5`` (last axis) of the rest-to-rest style quintic ending at ``yT`` with zero rates."""
    y0, dy0, ddy0, yT, T = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y0, dy0, ddy0, yT, T)))
    d = yT - y0
    c3 = (20 * d - (12 * dy0) * T - (3 * ddy0) * T**2) / (2 * T**3)
    c4 = (-30 * d + (16 * dy0) * T + (3 * ddy0) * T**2) / (2 * T**4)
    c5 = (12 * d - (6 * dy0) * T - ddy0 * T**2) / (2 * T**5)
    return np.stack([y0, dy0, 0.5 * ddy0, c3, c4, c5], axis=-1)


def eval_quintic(coeffs, t, T):
    """Value and first two derivatives; the curve is held constant after ``T``."""
    coeffs = np.asarray(coeffs, dtype=float)
    t = np.minimum(np.asarray(t, dtype=float), T)
    c0, c1, c2, c3, c4, c5 = np.moveaxis(coeffs, -1, 0)
    y = c0 + t * (c1 + t * (c2 + t * (c3 + t * (c4 + t * c5))))
    dy = c1 + t * (2 * c2 + t * (3 * c3 + t * (4 * c4 + t * 5 * c5)))
    ddy = 2 * c2 + t * (6 * c3 + t * (12 * c4 + t * 20 * c5))
    done = np.asarray(t >= T)
    return y, np.where(done, 0.0, dy), np.where(done, 0.0, ddy)


@dataclass
class Trajectory:
    """Planned path for one or many vehicles (array fields broadcast together)."""

    p_x0: np.ndarray
    speed0: np.ndarray
    track_speed: np.ndarray
    v_desired: float
    speed_gain: float
    lat_coeffs: np.ndarray
    lat_T: np.ndarray

    def sample(self, t) -> TrajectorySample:
        t = np.asarray(t, dtype=float)
        k = self.speed_gain
        decay = np.exp(-k * t)
        tracked_v = self.v_desired + (self.speed0 - self.v_desired) * decay
        tracked_x = self.p_x0 + self.v_desired * t + (self.speed0 - self.v_desired) * (1 - decay) / k if k > 0 \
            else self.p_x0 + self.speed0 * t
        x = np.where(self.track_speed, tracked_x, self.p_x0 + self.speed0 * t)
        dx = np.where(self.track_speed, tracked_v, self.speed0)
        ddx = np.where(self.track_speed, k * (self.v_desired - tracked_v), 0.0)
        y, dy, ddy = eval_quintic(self.lat_coeffs, t, self.lat_T)
        return TrajectorySample(sigma=np.stack([x, y], -1), sigma_dot=np.stack([dx, dy], -1),
                                sigma_ddot=np.stack(np.broadcast_arrays(ddx, ddy), -1))


def plan_lateral(X, y_target, horizon, params: PlannerParams, speed_ref=None) -> Trajectory:
    """Vectorised planner core: quintic lateral move to ``y_target`` over ``horizon``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v = X[:, V]
    dy0 = v * np.sin(X[:, PSI])
    speed0 = v * np.cos(X[:, PSI])
    T = np.maximum(np.asarray(horizon, dtype=float), params.min_lateral_horizon)
    coeffs = quintic_coeffs(X[:, PY], dy0, 0.0, y_target, T)
    track = np.ones(len(X), dtype=bool) if speed_ref is None else np.asarray(speed_ref, dtype=bool)
    return Trajectory(p_x0=X[:, PX], speed0=speed0, track_speed=track, v_desired=params.v_desired,
                      speed_gain=params.speed_gain, lat_coeffs=coeffs, lat_T=np.broadcast_to(T, v.shape))


def plan_trajectory(x, action: Action, geometry: LaneGeometry, horizon: float | None = None, *,
                    lane: int | None = None, params: PlannerParams = PlannerParams()) -> Trajectory:
    """Plan ``action`` from state ``x``.

    ``lane`` is the lane the vehicle is assigned to (defaults to the lane
    under ``p_y``).  ``horizon`` is the lateral duration; KL defaults to the
    lane-change duration for recentering, CL/CR always use it.
    """
    x = np.asarray(x, dtype=float)
    lane = int(geometry.lane_of(x[PY])) if lane is None else lane
    target = geometry.target_lane(lane, action)
    if action == Action.KL:
        T = params.lane_change_duration if horizon is None else horizon
    else:
        T = params.lane_change_duration
    return plan_lateral(x[None], geometry.center(target), T, params, speed_ref=[action == Action.KL])


def endogenous_reference(sample: TrajectorySample, v_eps: float = 0.1):
    """``(accel, curvature)`` that make a unicycle-like vehicle follow ``sample``."""
    sd = np.asarray(sample.sigma_dot, dtype=float)
    sdd = np.asarray(sample.sigma_ddot, dtype=float)
    speed2 = sd[..., 0] ** 2 + sd[..., 1] ** 2
    if np.any(speed2 < v_eps**2):
        raise DegenerateTrajectoryError(f"trajectory speed below {v_eps}")
    speed = np.sqrt(speed2)
    u1 = (sd[..., 0] * sdd[..., 0] + sd[..., 1] * sdd[..., 1]) / speed
    u2 = (sd[..., 0] * sdd[..., 1] - sd[..., 1] * sdd[..., 0]) / speed2**1.5
    return u1, u2


def references_from_trajectory(traj: Trajectory, t, wheelbase: float, box: InputBox,
                               v_eps: float = 0.1, heading=None) -> np.ndarray:
    """Control references ``[tan_delta, accel]`` at time ``t`` along ``traj``.

    Below ``v_eps`` the transformation is singular; there the acceleration
    reference is the path acceleration projected on the heading and steering
    is held at zero.
    """
    s = traj.sample(t)
    sd, sdd = s.sigma_dot, s.sigma_ddot
    speed2 = sd[..., 0] ** 2 + sd[..., 1] ** 2
    slow = speed2 < v_eps**2
    safe = TrajectorySample(s.sigma, np.where(slow[..., None], [1.0, 0.0], sd), sdd)
    u1, u2 = endogenous_reference(safe, v_eps=0.0)
    psi = np.zeros_like(speed2) if heading is None else np.asarray(heading, dtype=float)
    u1 = np.where(slow, sdd[..., 0] * np.cos(psi) + sdd[..., 1] * np.sin(psi), u1)
    u2 = np.where(slow, 0.0, u2)
    U = np.stack([wheelbase * u2, u1], axis=-1)
    return box.clip(U)


def one_hot(action: Action, n: int = N_ACTIONS) -> np.ndarray:
    a = np.zeros(n)
    a[int(action)] = 1.0
    return a


@dataclass
class ReferenceMatrix:
    """Columns are per-action references ``[tan_delta, accel]``; ``U @ one_hot(a)`` selects one."""

    U: np.ndarray
    available: np.ndarray

    def column(self, action: Action) -> np.ndarray:
        return self.U[:, int(action)]

    def select(self, a_onehot) -> np.ndarray:
        return self.U @ np.asarray(a_onehot, dtype=float)


def assemble_reference_matrix(x, geometry: LaneGeometry, *, lane: int | None = None,
                              maneuver_left: float = 0.0, wheelbase: float = 2.5, Ts: float = 0.01,
                              box: InputBox = InputBox(),
                              params: PlannerParams = PlannerParams()) -> ReferenceMatrix:
    """Stack the next-tick references of KL, CL and CR.

    Unavailable actions (no lane on that side) get a NaN column and are
    flagged in ``available``.
    """
    x = np.asarray(x, dtype=float)
    lane = int(geometry.lane_of(x[PY])) if lane is None else lane
    U = np.full((2, N_ACTIONS), np.nan)
    available = np.zeros(N_ACTIONS, dtype=bool)
    for a in ACTIONS:
        try:
            horizon = maneuver_left if (a == Action.KL and maneuver_left > 0) else None
            traj = plan_trajectory(x, a, geometry, horizon, lane=lane, params=params)
        except InvalidActionError:
            continue
        U[:, int(a)] = references_from_trajectory(traj, Ts, wheelbase, box, params.v_eps, heading=x[PSI])[0]
        available[int(a)] = True
    return ReferenceMatrix(U=U, available=available)


@dataclass(frozen=True)
class TrackingGains:
    """Lateral error dynamics ``e'' + 2 zeta omega e' + omega^2 e = 0`` around the planned path."""

    omega: float = 1.0
    damping: float = 0.9
    v_floor: float = 2.0


def hold_plan(y):
    """Quintic coefficients that simply hold lateral position ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    coeffs = np.zeros(y.shape + (6,))
    coeffs[..., 0] = y
    return coeffs


def lateral_plan(X, y_target, duration: float) -> np.ndarray:
    """Quintic from each vehicle's current lateral state to ``y_target`` over ``duration``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    dy0 = X[:, V] * np.sin(X[:, PSI])
    return quintic_coeffs(X[:, PY], dy0, 0.0, y_target, duration)


def tracking_reference(X, coeffs, T, elapsed, *, track_speed, params: PlannerParams, wheelbase: float, Ts: float,
                       box: InputBox, gains: TrackingGains = TrackingGains()) -> np.ndarray:
    """References ``[tan_delta, accel]`` that follow stored lateral plans.

    Feedforward comes from the endogenous transformation of the plan at the
    next tick (longitudinally: proportional speed tracking, or constant speed
    while ``track_speed`` is false).  A lateral/heading feedback term with
    speed-scheduled gains keeps the closed loop on the plan.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v = X[:, V]
    y, dy, ddy = eval_quintic(coeffs, np.asarray(elapsed, dtype=float) + Ts, T)
    ax = np.where(track_speed, params.speed_gain * (params.v_desired - v), 0.0)
    vx = np.maximum(v, params.v_eps)
    sample = TrajectorySample(sigma=np.stack([X[:, PX], y], -1), sigma_dot=np.stack([vx, dy], -1),
                              sigma_ddot=np.stack([ax, ddy], -1))
    u1, kappa = endogenous_reference(sample, v_eps=0.0)
    vs = np.maximum(v, gains.v_floor)
    k_y = gains.omega**2 / vs**2
    k_psi = 2.0 * gains.damping * gains.omega / vs
    psi_ref = np.arctan2(dy, vx)
    kappa = kappa - k_y * (X[:, PY] - y) - k_psi * (X[:, PSI] - psi_ref)
    slow = v < params.v_eps
    accel = np.where(slow, ax, u1)
    kappa = np.where(slow, 0.0, kappa)
    return box.clip(np.stack([wheelbase * kappa, accel], axis=-1))
