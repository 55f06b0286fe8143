import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safelane.cbf_qp import (AffineBarrier, QpProblem, QpTrace, cbf_row, certify_forward_invariance, h_value,
                             solve_batch, solve_noise_robust, solve_relaxed, solve_strict)

from oracles import grid_objective, kkt_enumeration, random_affine_system


def scalar_problem(u_ref, noise=0.0, box=None, x=1.0, f=None, eta=0.5):
    b = AffineBarrier(p=[1.0], q=0.0, eta=eta)
    return QpProblem(u_ref=[u_ref], barriers=[b], f_x=[x if f is None else f], g_x=[[1.0]], x=[x],
                     noise_term=noise, input_box=box)


# --- barriers and rows ---------------------------------------------------------------------------

def test_h_value_examples():
    assert h_value(AffineBarrier(p=[1, 0, 0], q=1), np.zeros(3)) == 1
    assert h_value(AffineBarrier(p=[1, 0], q=-5), [5, 3]) == 0
    rng = np.random.default_rng(0)
    p, x, q = rng.normal(size=4), rng.normal(size=4), rng.normal()
    assert h_value(AffineBarrier(p=p, q=q), x) == pytest.approx(sum(pi * xi for pi, xi in zip(p, x)) + q)
    with pytest.raises(ValueError):
        h_value(AffineBarrier(p=[1, 0], q=0), [1, 2, 3])


def test_barrier_validation():
    with pytest.raises(ValueError):
        AffineBarrier(p=[0, 0], q=1)
    with pytest.raises(ValueError):
        AffineBarrier(p=[1], q=0, eta=1.5)
    assert AffineBarrier(p=[1], q=2).noise_term([0.1]) == pytest.approx(0.1)
    assert AffineBarrier(p=[1, -2], q=0).noise_term(0.1) == pytest.approx(0.3)


def test_cbf_row_scalar():
    b = AffineBarrier(p=[1.0], q=0.0, eta=0.5)
    row = cbf_row(b, [1.0], [[1.0]], [1.0])
    assert row.coeff_u[0] == 1 and row.rhs == pytest.approx(-0.5)
    assert cbf_row(b, [1.0], [[1.0]], [1.0], noise_term=0.1).rhs == pytest.approx(-0.4)


# --- scalar examples -----------------------------------------------------------------------------

def test_strict_projection():
    s = solve_strict(scalar_problem(-2.0))
    assert s.feasible and s.u[0] == pytest.approx(-0.5) and s.zeta == 0


def test_strict_interior():
    s = solve_strict(scalar_problem(3.0))
    assert s.u[0] == 3.0 and s.objective == 0


def test_strict_infeasible_flag():
    s = solve_strict(scalar_problem(0.0, box=([-2.0], [-1.0])))
    assert not s.feasible and np.isnan(s.u).all()


def test_relaxed_analytic():
    # h = x, x = 0.1, p.f = -0.9, u in [0, 0.5]: -0.9 + u >= 0.05 - zeta
    s = solve_relaxed(scalar_problem(0.0, box=([0.0], [0.5]), x=0.1, f=-0.9))
    assert s.u[0] == pytest.approx(0.5) and s.zeta == pytest.approx(0.45)


def test_relaxed_equals_strict_when_feasible():
    for u_ref in (-2.0, 0.0, 3.0):
        a, b = solve_strict(scalar_problem(u_ref)), solve_relaxed(scalar_problem(u_ref))
        assert b.zeta == 0 and a.u[0] == pytest.approx(b.u[0])


def test_zeta_nonincreasing_in_big_m():
    zs = []
    for M in (1e3, 1e6, 1e9):
        p = scalar_problem(0.0, box=([0.0], [0.5]), x=0.1, f=-0.9)
        p.big_m = M
        zs.append(solve_relaxed(p).zeta)
    assert zs[0] >= zs[1] >= zs[2]


def test_small_big_m_trades_slack():
    # with M tiny the slack is cheaper than moving u
    p = scalar_problem(0.0, box=([0.0], [0.5]), x=0.1, f=-0.9)
    p.big_m = 0.2
    s = solve_relaxed(p)
    assert s.u[0] == pytest.approx(0.1) and s.zeta == pytest.approx(0.85)


def test_noise_robust_examples():
    s = solve_noise_robust(scalar_problem(-2.0, noise=0.1))
    assert s.u[0] == pytest.approx(-0.4)
    a, b = solve_noise_robust(scalar_problem(-2.0)), solve_relaxed(scalar_problem(-2.0))
    assert a.u[0] == b.u[0] and a.zeta == b.zeta


def test_problem_validation():
    with pytest.raises(ValueError):
        scalar_problem(0.0, noise=-1.0)
    p = scalar_problem(0.0)
    with pytest.raises(ValueError):
        QpProblem(u_ref=[0], barriers=p.barriers, f_x=[0], g_x=[[1]], x=[0], big_m=0)


# --- random instances against the oracle ---------------------------------------------------------

def random_instance(rng, K=None, box=True):
    K = int(rng.integers(1, 7)) if K is None else K
    A = rng.normal(size=(K, 2))
    c = rng.normal(size=K)
    r = rng.normal(size=2) * 2
    lo = -rng.uniform(0.5, 3, 2) if box else np.full(2, -np.inf)
    hi = rng.uniform(0.5, 3, 2) if box else np.full(2, np.inf)
    return A, c, r, lo, hi


def test_strict_matches_kkt_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        A, c, r, lo, hi = random_instance(rng)
        u, z, f, obj = solve_batch(A[None], c[None], r[None], lo[None], hi[None], relaxed=False)
        ou, _, of, oobj = kkt_enumeration(A, c, r, lo, hi)
        assert f[0] == of
        if of:
            assert obj[0] == pytest.approx(oobj, abs=1e-6)
            assert np.all(A @ u[0] >= c - 1e-8)


def test_relaxed_matches_kkt_oracle():
    rng = np.random.default_rng(12)
    for M in (1e6, 5.0, 0.5):
        for _ in range(40):
            A, c, r, lo, hi = random_instance(rng)
            u, z, f, obj = solve_batch(A[None], c[None], r[None], lo[None], hi[None], relaxed=True, big_m=M)
            _, oz, of, oobj = kkt_enumeration(A, c, r, lo, hi, relaxed=True, big_m=M)
            assert f[0] and of
            assert obj[0] == pytest.approx(oobj, rel=1e-8, abs=1e-6)
            assert z[0] >= 0


def test_strict_not_beaten_by_grid():
    rng = np.random.default_rng(13)
    for _ in range(30):
        A, c, r, lo, hi = random_instance(rng, K=3)
        _, _, f, obj = solve_batch(A[None], c[None], r[None], lo[None], hi[None], relaxed=False)
        g = grid_objective(A, c, r, lo, hi, n=201)
        if f[0]:
            assert obj[0] <= g + 1e-9
        else:
            assert np.isinf(g)


def test_batch_equals_single():
    rng = np.random.default_rng(14)
    inst = [random_instance(rng, K=4) for _ in range(25)]
    A, c, r, lo, hi = (np.stack(v) for v in zip(*inst))
    mask = rng.random((25, 4)) < 0.7
    u, z, f, obj = solve_batch(A, c, r, lo, hi, relaxed=True, row_mask=mask)
    for i in range(25):
        ui, zi, fi, oi = solve_batch(A[i][mask[i]][None], c[i][mask[i]][None], r[i][None], lo[i][None],
                                     hi[i][None], relaxed=True)
        assert fi[0] == f[i]
        np.testing.assert_allclose(u[i], ui[0], atol=1e-12)


def test_min_norm_tie_break():
    # objective ignores the direction orthogonal to a degenerate setup: two identical rows, r on the face
    A = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    c = np.array([[1.0, 1.0]])
    u, _, f, _ = solve_batch(A, c, np.array([[1.0, 0.5]]), np.full((1, 2), -5.0), np.full((1, 2), 5.0),
                             relaxed=False)
    np.testing.assert_allclose(u[0], [1.0, 0.5])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_noise_tightening_containment(seed):
    rng = np.random.default_rng(seed)
    A, c, r, lo, hi = random_instance(rng, K=3)
    t = rng.uniform(0, 0.5, 3)
    # any u satisfying the tightened rows satisfies the nominal rows
    U = rng.uniform(lo, hi, size=(200, 2))
    tight = np.all(U @ A.T >= c + t, axis=1)
    nominal = np.all(U @ A.T >= c, axis=1)
    assert np.all(nominal[tight])
    _, _, fs, _ = solve_batch(A[None], (c + t)[None], r[None], lo[None], hi[None], relaxed=False)
    _, _, fn, _ = solve_batch(A[None], c[None], r[None], lo[None], hi[None], relaxed=False)
    assert fn[0] or not fs[0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_solution_kkt_conditions(seed):
    """Stationarity with non-negative multipliers on active rows, checked independently."""
    rng = np.random.default_rng(seed)
    A, c, r, lo, hi = random_instance(rng, K=3, box=False)
    u, _, f, _ = solve_batch(A[None], c[None], r[None], lo[None], hi[None], relaxed=False)
    if not f[0]:
        return
    u = u[0]
    active = np.abs(A @ u - c) <= 1e-7 * (1 + np.abs(c))
    g = 2 * (u - r)
    if not active.any():
        np.testing.assert_allclose(g, 0, atol=1e-8)
        return
    lam, *_ = np.linalg.lstsq(A[active].T, g, rcond=None)
    np.testing.assert_allclose(A[active].T @ lam, g, atol=1e-6)
    assert np.all(lam >= -1e-6)


# --- invariance certificates ---------------------------------------------------------------------

def test_certificate_holds():
    b = AffineBarrier(p=[1.0], q=0.0, eta=0.5)
    cert = certify_forward_invariance([[1.0], [0.6], [0.5]], [b])
    assert cert.holds and cert.first_violation is None


def test_certificate_boundary_violation():
    b = AffineBarrier(p=[1.0], q=0.0, eta=0.5)
    Z = 0.2
    cert = certify_forward_invariance([[-Z / 0.5 - 0.01]], [b], z_max=Z)
    assert not cert.holds and cert.first_violation == 0
    assert cert.shifted_offset == pytest.approx(0.4)


def test_certificate_decay_violation():
    b = AffineBarrier(p=[1.0], q=0.0, eta=0.1)
    cert = certify_forward_invariance([[1.0], [0.5]], [b])
    assert not cert.holds and cert.first_violation == 1


def test_certificate_errors():
    with pytest.raises(ZeroDivisionError):
        certify_forward_invariance([[1.0]], [AffineBarrier(p=[1.0], q=0, eta=0.0)], z_max=0.1)
    with pytest.raises(ValueError):
        certify_forward_invariance(np.zeros((0, 1)), [AffineBarrier(p=[1.0], q=0)])


def test_closed_loop_relaxed_certified():
    rng = np.random.default_rng(5)
    for _ in range(5):
        F, G = random_affine_system(rng)
        n = len(F)
        bars = [AffineBarrier(p=rng.normal(size=n), q=1.0, eta=0.2) for _ in range(3)]
        x, traj, zmax = np.zeros(n), [np.zeros(n)], 0.0
        for _ in range(1000):
            prob = QpProblem(u_ref=rng.normal(size=2) * 3, barriers=bars, f_x=F @ x, g_x=G, x=x,
                             input_box=(-np.ones(2), np.ones(2)))
            s = solve_relaxed(prob)
            zmax = max(zmax, s.zeta)
            x = F @ x + G @ s.u
            traj.append(x)
        assert certify_forward_invariance(traj, bars, z_max=zmax, tol=1e-9).holds


def test_trace_jsonl_roundtrip(tmp_path):
    fh = io.StringIO()
    tr = QpTrace(stream=fh)
    tr.log(3, 1, "KL", True, 0.0, 1.5, proposed="CL", epoch=0)
    tr.log(4, 2, "ES", False, float("nan"), float("inf"))
    p = tmp_path / "t.jsonl"
    p.write_text(fh.getvalue())
    recs = QpTrace.read(p)
    assert recs == tr.records
    assert recs[1]["zeta"] is None and json.loads(fh.getvalue().splitlines()[0])["proposed"] == "CL"
