"""Intelligent driver model car following and a three-gap lane-change rule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import InputBox


@dataclass(frozen=True)
class IdmParams:
    v0: float = 30.0
    T: float = 1.5
    s0: float = 2.0
    a: float = 1.4
    b: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        if min(self.v0, self.T, self.s0, self.a, self.b, self.delta) <= 0:
            raise ValueError(f"IDM parameters must be positive: {self}")


@dataclass(frozen=True)
class GapAcceptanceParams:
    g_front: float = 15.0
    g_rear: float = 15.0
    incentive_margin: float = 15.0
    safe_decel: float = 4.0


def desired_gap(v, v_lead, p: IdmParams):
    v = np.asarray(v, dtype=float)
    dyn = v * p.T + v * (v - np.asarray(v_lead, dtype=float)) / (2.0 * np.sqrt(p.a * p.b))
    return p.s0 + np.maximum(dyn, 0.0)


def idm_accel(v, v_lead, gap, p: IdmParams = IdmParams(), box: InputBox | None = InputBox()):
    """IDM acceleration; ``gap = inf`` means free road, ``gap <= 0`` means full braking."""
    v = np.asarray(v, dtype=float)
    gap = np.asarray(gap, dtype=float)
    v_lead = np.where(np.isfinite(gap), v_lead, v)
    free = 1.0 - (np.maximum(v, 0.0) / p.v0) ** p.delta
    safe_gap = np.where(gap > 0, gap, 1.0)
    interaction = np.where(np.isfinite(gap), (desired_gap(v, v_lead, p) / safe_gap) ** 2, 0.0)
    acc = p.a * (free - interaction)
    lo = -np.inf if box is None else box.a_min
    hi = np.inf if box is None else box.a_max
    acc = np.where(gap > 0, np.clip(acc, lo, hi), lo if box is not None else -np.inf)
    return acc if acc.ndim else float(acc)


def gap_acceptance_change(current_front_gap, target_front_gap, target_rear_gap,
                          p: GapAcceptanceParams = GapAcceptanceParams()):
    """Change iff both target-lane gaps are acceptable and the target leader is farther ahead.

    Gaps are bumper gaps; ``inf`` stands for an empty lane within sensing range.
    """
    cur = np.asarray(current_front_gap, dtype=float)
    tf = np.asarray(target_front_gap, dtype=float)
    tr = np.asarray(target_rear_gap, dtype=float)
    with np.errstate(invalid="ignore"):
        incentive = np.where(np.isinf(tf), np.isfinite(cur), tf > cur + p.incentive_margin)
    out = (tf >= p.g_front) & (tr >= p.g_rear) & incentive
    return out if out.ndim else bool(out)


def lane_change_safe(v_ego, v_lead, front_gap, v_follow, rear_gap, idm: IdmParams = IdmParams(),
                     p: GapAcceptanceParams = GapAcceptanceParams()):
    """Neither the changer nor its new follower would need to brake harder than ``safe_decel``.

    Gap thresholds alone ignore closing speed; this guard keeps baseline
    traffic collision-free.
    """
    a_ego = idm_accel(v_ego, v_lead, front_gap, idm, box=None)
    a_fol = idm_accel(v_follow, v_ego, rear_gap, idm, box=None)
    out = (np.asarray(a_ego) >= -p.safe_decel) & (np.asarray(a_fol) >= -p.safe_decel)
    return out if out.ndim else bool(out)
