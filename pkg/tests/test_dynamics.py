import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safelane.dynamics import (BicycleParams, InputBox, NoiseSpec, VehicleState, f_bicycle, g_bicycle, step,
                               step_noisy, wrap_angle)

P = BicycleParams(L=2.5, Ts=0.01)


def test_drift_straight():
    np.testing.assert_allclose(f_bicycle([0, 0, 0, 10], P), [0.1, 0, 0, 10])


def test_drift_lateral_heading():
    np.testing.assert_allclose(f_bicycle([0, 0, np.pi / 2, 10], P), [0, 0.1, np.pi / 2, 10], atol=1e-15)


def test_drift_matches_formula():
    x = np.array([5.0, 1.0, 0.3, 8.0])
    expect = [5 + 8 * np.cos(0.3) * 0.01, 1 + 8 * np.sin(0.3) * 0.01, 0.3, 8.0]
    np.testing.assert_allclose(f_bicycle(x, P), expect, rtol=0, atol=1e-15)


def test_input_matrix():
    g0 = g_bicycle([1, 2, 0.1, 0.0], P)
    assert np.all(g0[2] == 0)
    g = g_bicycle([0, 0, 0, 10.0], P)
    assert g[2, 0] == pytest.approx(0.04)
    np.testing.assert_array_equal(g[:, 1], [0, 0, 0, 0.01])
    np.testing.assert_array_equal(g[:2], 0)


def test_step_examples():
    np.testing.assert_allclose(step([0, 0, 0, 10], [0, 0], P), [0.1, 0, 0, 10])
    assert step([0, 0, 0, 10], [0, 1], P)[3] == pytest.approx(10.01)
    assert step([0, 0, 0, 10], [0.25, 0], P)[2] == pytest.approx(0.01)


def test_step_rejects_nonfinite():
    with pytest.raises(ValueError):
        step([0, 0, np.nan, 1], [0, 0], P)
    with pytest.raises(ValueError):
        step([0, 0, 0, 1], [np.inf, 0], P)


def test_ring_wrap_and_heading_wrap():
    ring = BicycleParams(road_length=100.0)
    x = step([99.95, 0, 0, 10], [0, 0], ring)
    assert 0 <= x[0] < 100 and x[0] == pytest.approx(0.05)
    x = step([0, 0, np.pi - 1e-4, 10], [0.45, 0], P)
    assert -np.pi < x[2] <= np.pi and x[2] < 0
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 4)) + [0, 0, 0, 10]
    U = rng.normal(size=(7, 2))
    np.testing.assert_array_equal(step(X, U, P), np.stack([step(x, u, P) for x, u in zip(X, U)]))


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=2, max_size=2),
       st.lists(finite, min_size=2, max_size=2), st.floats(0, 1))
def test_affine_in_input(x, u1, u2, a):
    x = np.array(x) + [0, 0, 0, 6]
    u1, u2 = np.array(u1), np.array(u2)
    # compare before heading wrap by keeping psi small
    x[2] = np.clip(x[2], -1, 1)
    lhs = step(x, a * u1 + (1 - a) * u2, P)
    rhs = a * step(x, u1, P) + (1 - a) * step(x, u2, P)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_noise_zero_is_step():
    rng = np.random.default_rng(1)
    x, u = np.array([3.0, 1, 0.2, 9]), np.array([0.1, -1])
    np.testing.assert_array_equal(step_noisy(x, u, P, np.zeros(4), rng), step(x, u, P))


def test_noise_bound_sweep():
    rng = np.random.default_rng(2)
    W = np.array([0.01, 0.01, 0.01, 0.01])
    X = np.tile([3.0, 1, 0.2, 9], (100_000, 1))
    U = np.tile([0.1, -1], (100_000, 1))
    d = step_noisy(X, U, P, W, rng) - step(X, U, P)
    assert np.max(np.abs(d)) <= 0.01
    assert np.max(np.abs(d)) > 0.0099


def test_noise_deterministic():
    spec = NoiseSpec(W=0.05, seed=7)
    runs = []
    for _ in range(2):
        rng, x = spec.sampler(), np.array([0, 0, 0, 10.0])
        traj = []
        for _ in range(50):
            x = step_noisy(x, [0.01, 0.1], P, spec.W, rng)
            traj.append(x)
        runs.append(np.array(traj))
    np.testing.assert_array_equal(runs[0], runs[1])


def test_param_validation():
    with pytest.raises(ValueError):
        BicycleParams(L=0)
    with pytest.raises(ValueError):
        BicycleParams(Ts=-1)
    with pytest.raises(ValueError):
        NoiseSpec(W=-0.1)
    with pytest.raises(ValueError):
        InputBox(a_min=1.0)


def test_value_types_roundtrip():
    s = VehicleState(1, 2, 0.3, 4)
    assert VehicleState.from_array(s.to_array()) == s
    box = InputBox()
    assert box.contains([0.45, 3.0]) and not box.contains([0.5, 0])
    np.testing.assert_array_equal(box.clip([1, -20]), [0.45, -8])
