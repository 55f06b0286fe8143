import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safelane.dynamics import BicycleParams, InputBox, step
from safelane.reference_planner import (ACTIONS, Action, DegenerateTrajectoryError, InvalidActionError,
                                        LaneGeometry, PlannerParams, TrajectorySample, assemble_reference_matrix,
                                        endogenous_reference, eval_quintic, hold_plan, lateral_plan, one_hot,
                                        plan_trajectory, quintic_coeffs, tracking_reference)

GEO = LaneGeometry(n_lanes=3, lane_width=3.5)
PAR = PlannerParams()
BIKE = BicycleParams()
BOX = InputBox()


def sample(sd, sdd):
    return TrajectorySample(np.zeros(2), np.array(sd, float), np.array(sdd, float))


def test_kl_straight_line():
    x = np.array([0.0, GEO.center(1), 0.0, PAR.v_desired])
    s = plan_trajectory(x, Action.KL, GEO).sample(np.linspace(0, 3, 31))
    np.testing.assert_allclose(s.sigma[:, 1], GEO.center(1))
    np.testing.assert_allclose(s.sigma_dot[:, 0], PAR.v_desired)


def test_kl_speed_tracks_desired():
    x = np.array([0.0, GEO.center(1), 0.0, 20.0])
    s = plan_trajectory(x, Action.KL, GEO).sample(np.array([0.0, 1.0, 10.0]))
    assert s.sigma_dot[0, 0] == pytest.approx(20.0)
    assert 20 < s.sigma_dot[1, 0] < s.sigma_dot[2, 0] < PAR.v_desired


def test_cl_quintic_boundary_conditions():
    x = np.array([0.0, GEO.center(1), 0.0, 20.0])
    traj = plan_trajectory(x, Action.CL, GEO)
    T = PAR.lane_change_duration
    s0, sT, sm = (traj.sample(t) for t in (0.0, T, T / 2))
    y = lambda s: s.sigma[0, 1] - GEO.center(1)  # noqa: E731
    assert y(s0) == pytest.approx(0.0)
    assert y(sT) == pytest.approx(GEO.lane_width)
    assert y(sm) == pytest.approx(GEO.lane_width / 2)
    for s in (s0, sT):
        assert s.sigma_dot[0, 1] == pytest.approx(0.0, abs=1e-12)
        assert s.sigma_ddot[0, 1] == pytest.approx(0.0, abs=1e-12)
    # constant longitudinal speed while changing lanes
    assert traj.sample(1.3).sigma_dot[0, 0] == pytest.approx(20.0)


def test_quintic_generic_boundaries():
    c = quintic_coeffs(1.0, 0.7, -0.3, 4.0, 2.5)
    y, dy, ddy = eval_quintic(c, 0.0, 2.5)
    assert (y, dy, ddy) == pytest.approx((1.0, 0.7, -0.3))
    y, dy, ddy = eval_quintic(c, 2.5 - 1e-12, 2.5)
    assert y == pytest.approx(4.0) and dy == pytest.approx(0, abs=1e-9) and ddy == pytest.approx(0, abs=1e-9)
    # held after the horizon
    assert eval_quintic(c, 9.0, 2.5) == pytest.approx((4.0, 0.0, 0.0))


def test_invalid_lane_changes():
    left = np.array([0.0, GEO.center(2), 0, 20])
    right = np.array([0.0, GEO.center(0), 0, 20])
    with pytest.raises(InvalidActionError):
        plan_trajectory(left, Action.CL, GEO)
    with pytest.raises(InvalidActionError):
        plan_trajectory(right, Action.CR, GEO)


def test_endogenous_examples():
    assert endogenous_reference(sample([20, 0], [0, 0])) == pytest.approx((0, 0))
    assert endogenous_reference(sample([10, 0], [1, 0])) == pytest.approx((1, 0))
    with pytest.raises(DegenerateTrajectoryError):
        endogenous_reference(sample([0.05, 0], [1, 0]))


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 200.0), st.floats(0.5, 40.0), st.floats(0, 2 * np.pi))
def test_endogenous_circle_curvature(R, v, th):
    # sigma = R (cos wt, sin wt), w = v / R
    w = v / R
    sd = [-R * w * np.sin(th), R * w * np.cos(th)]
    sdd = [-R * w**2 * np.cos(th), -R * w**2 * np.sin(th)]
    u1, u2 = endogenous_reference(sample(sd, sdd))
    assert u1 == pytest.approx(0.0, abs=1e-9 * v)
    assert u2 == pytest.approx(1.0 / R, rel=1e-9)


def test_reference_matrix_kl_cruise_zero():
    x = np.array([0.0, GEO.center(1), 0.0, PAR.v_desired])
    R = assemble_reference_matrix(x, GEO)
    np.testing.assert_allclose(R.column(Action.KL), [0.0, 0.0], atol=1e-9)
    assert R.available.all()


def test_reference_matrix_selection_identity():
    x = np.array([10.0, GEO.center(1) + 0.3, 0.02, 22.0])
    R = assemble_reference_matrix(x, GEO, lane=1)
    for a in ACTIONS:
        np.testing.assert_array_equal(R.select(one_hot(a)), R.column(a))
        assert one_hot(a).sum() == 1 and one_hot(a)[int(a)] == 1


def test_reference_matrix_signs_and_box():
    x = np.array([0.0, GEO.center(1), 0.0, 20.0])
    R = assemble_reference_matrix(x, GEO)
    assert R.column(Action.CL)[0] > 0 > R.column(Action.CR)[0]
    for a in ACTIONS:
        assert BOX.contains(R.column(a))


def test_reference_matrix_marks_missing_lane():
    x = np.array([0.0, GEO.center(2), 0.0, 20.0])
    R = assemble_reference_matrix(x, GEO)
    assert not R.available[Action.CL] and np.isnan(R.column(Action.CL)).all()
    assert R.available[Action.KL] and R.available[Action.CR]


def test_standstill_reference():
    x = np.array([0.0, GEO.center(1), 0.0, 0.0])
    R = assemble_reference_matrix(x, GEO)
    assert np.isfinite(R.U[:, 0]).all() and R.column(Action.KL)[0] == 0


def run_plan(x, coeffs, T, seconds, track_speed):
    X = np.array(x, float)[None]
    for k in range(int(round(seconds / BIKE.Ts))):
        u = tracking_reference(X, coeffs, T, k * BIKE.Ts, track_speed=np.array([track_speed]), params=PAR,
                               wheelbase=BIKE.L, Ts=BIKE.Ts, box=BOX)
        assert BOX.contains(u[0])
        X = step(X, u, BIKE)
    return X[0]


@pytest.mark.parametrize("action", list(ACTIONS))
def test_tracking_one_epoch_endpoint(action):
    """Following each action's plan for one decision epoch lands within 5% of a lane width."""
    x = np.array([0.0, GEO.center(1), 0.0, 20.0])
    target = GEO.center(GEO.target_lane(1, action))
    coeffs = lateral_plan(x[None], target, PAR.lane_change_duration) if action != Action.KL else hold_plan([x[1]])
    end = run_plan(x, coeffs, PAR.lane_change_duration, 0.5, action == Action.KL)
    y_plan = eval_quintic(coeffs[0], 0.5, PAR.lane_change_duration)[0]
    assert abs(end[1] - y_plan) <= 0.05 * GEO.lane_width


@pytest.mark.parametrize("v", [8.0, 20.0, 30.0])
def test_tracking_full_lane_change(v):
    x = np.array([0.0, GEO.center(0), 0.0, v])
    coeffs = lateral_plan(x[None], GEO.center(1), PAR.lane_change_duration)
    end = run_plan(x, coeffs, PAR.lane_change_duration, 6.0, False)
    assert abs(end[1] - GEO.center(1)) <= 0.05 * GEO.lane_width
    assert abs(end[2]) < 0.02


def test_lane_geometry():
    assert GEO.lane_of(-1.0) == 0 and GEO.lane_of(100.0) == 2 and GEO.lane_of(3.6) == 1
    assert GEO.center(0) == pytest.approx(1.75)
    assert GEO.target_lane(0, Action.CL) == 1
