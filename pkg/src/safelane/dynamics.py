"""Discrete-time kinematic bicycle model in control-affine form.

State ``x = [p_x, p_y, psi, v]``, input ``u = [tan_delta, accel]``.  Every
function accepts a single state of shape ``(4,)`` or a batch ``(N, 4)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PX, PY, PSI, V = range(4)
STATE_DIM = 4
INPUT_DIM = 2


@dataclass(frozen=True)
class VehicleState:
    p_x: float
    p_y: float
    psi: float
    v: float

    def to_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.psi, self.v], dtype=float)

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[PX]), float(x[PY]), float(x[PSI]), float(x[V]))


@dataclass(frozen=True)
class ControlInput:
    tan_delta: float
    accel: float

    def to_array(self) -> np.ndarray:
        return np.array([self.tan_delta, self.accel], dtype=float)


@dataclass(frozen=True)
class InputBox:
    """Compact input set: ``|tan_delta| <= tan_delta_max``, ``accel in [a_min, a_max]``."""

    a_min: float = -8.0
    a_max: float = 3.0
    tan_delta_max: float = 0.45

    def __post_init__(self):
        if not (self.a_min < 0 < self.a_max) or self.tan_delta_max <= 0:
            raise ValueError(f"degenerate input box {self}")

    @property
    def lower(self) -> np.ndarray:
        return np.array([-self.tan_delta_max, self.a_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.tan_delta_max, self.a_max])

    def clip(self, u):
        return np.clip(u, self.lower, self.upper)

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class BicycleParams:
    """Axle distance ``L`` and controller sample time ``Ts`` (100 Hz by default)."""

    L: float = 2.5
    Ts: float = 0.01
    road_length: float | None = None

    def __post_init__(self):
        if self.L <= 0 or self.Ts <= 0:
            raise ValueError(f"L and Ts must be positive, got L={self.L}, Ts={self.Ts}")
        if self.road_length is not None and self.road_length <= 0:
            raise ValueError("road_length must be positive")


@dataclass
class NoiseSpec:
    """Componentwise bound ``|w[i]| <= W[i]`` on additive process noise."""

    W: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))
    seed: int = 0

    def __post_init__(self):
        self.W = np.broadcast_to(np.asarray(self.W, dtype=float), (STATE_DIM,)).copy()
        if np.any(self.W < 0) or not np.all(np.isfinite(self.W)):
            raise ValueError("noise bound W must be finite and non-negative")

    def sampler(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def wrap_angle(psi):
    """Map angles to ``(-pi, pi]``."""
    out = np.pi - np.mod(np.pi - np.asarray(psi, dtype=float), 2.0 * np.pi)
    return out if np.ndim(out) else float(out)


def f_bicycle(x, params: BicycleParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[..., PX] = x[..., PX] + x[..., V] * np.cos(x[..., PSI]) * params.Ts
    out[..., PY] = x[..., PY] + x[..., V] * np.sin(x[..., PSI]) * params.Ts
    return out


def g_bicycle(x, params: BicycleParams) -> np.ndarray:
    """Input matrix of shape ``(..., 4, 2)``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.shape[:-1] + (STATE_DIM, INPUT_DIM))
    g[..., PSI, 0] = x[..., V] * params.Ts / params.L
    g[..., V, 1] = params.Ts
    return g


def _normalize(x, params: BicycleParams) -> np.ndarray:
    x[..., PSI] = wrap_angle(x[..., PSI])
    if params.road_length is not None:
        x[..., PX] = np.mod(x[..., PX], params.road_length)
        # mod can round up to exactly road_length for tiny negative inputs
        x[..., PX] = np.where(x[..., PX] >= params.road_length, 0.0, x[..., PX])
    return x


def step(x, u, params: BicycleParams) -> np.ndarray:
    """One explicit-Euler step ``f(x) + g(x) u`` with heading and ring wrap."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or input")
    nxt = f_bicycle(x, params) + np.einsum("...ij,...j->...i", g_bicycle(x, params), u)
    return _normalize(nxt, params)


def sample_noise(rng: np.random.Generator, W, shape=()) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    return rng.uniform(-1.0, 1.0, size=tuple(shape) + (STATE_DIM,)) * W


def step_noisy(x, u, params: BicycleParams, W, rng: np.random.Generator) -> np.ndarray:
    """``step`` plus uniform noise in ``[-W, W]``; ``rng`` is the seeded noise stream."""
    x = np.asarray(x, dtype=float)
    w = sample_noise(rng, W, x.shape[:-1])
    return _normalize(step(x, u, params) + w, params)
