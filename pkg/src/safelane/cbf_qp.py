"""Affine discrete-time control barrier functions and the safety QPs built on them.

A barrier ``h(x) = p.x + q`` certifies one step when

    p.f(x) + p.g(x) u + q_next - noise_term >= (1 - eta) h(x) - zeta

where ``q_next`` is the offset at the next tick (equal to ``q`` for a static
half-space; moving obstacles shift it) and ``noise_term`` robustifies the row
against bounded additive noise.

The QPs minimise ``||u - u_ref||^2`` (plus ``M zeta`` when relaxed) over an
input box.  The decision space is tiny (``u`` in R^1 or R^2 plus the slack), so
the solver enumerates faces of the feasible polyhedron, computes the closed-form
minimiser on each face and keeps the best primal-feasible one.  This is exact
up to rounding and vectorises over a batch of problems, which is what the
simulator needs at 100 Hz.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, Sequence

import numpy as np

FEAS_TOL = 1e-9
DEFAULT_BIG_M = 1e6


@dataclass
class AffineBarrier:
    p: np.ndarray
    q: float
    eta: float = 0.2
    q_next: float | None = None
    name: str = ""

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).ravel()
        if not np.any(self.p):
            raise ValueError("barrier normal p must be nonzero")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        self.q = float(self.q)
        if self.q_next is None:
            self.q_next = self.q

    def noise_term(self, W) -> float:
        """Worst case of ``-p.w`` over ``|w_i| <= W_i``."""
        return float(np.abs(self.p) @ np.broadcast_to(np.asarray(W, dtype=float), self.p.shape))


def h_value(b: AffineBarrier, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != b.p.shape[0]:
        raise ValueError(f"state dimension {x.shape[-1]} does not match barrier dimension {b.p.shape[0]}")
    return x @ b.p + b.q


@dataclass(frozen=True)
class CbfRow:
    """Linear row ``coeff_u . u + coeff_zeta * zeta >= rhs``."""

    coeff_u: np.ndarray
    coeff_zeta: float
    rhs: float


def cbf_row(b: AffineBarrier, f_x, g_x, x, noise_term: float = 0.0) -> CbfRow:
    f_x = np.asarray(f_x, dtype=float)
    g_x = np.asarray(g_x, dtype=float).reshape(b.p.shape[0], -1)
    rhs = (1.0 - b.eta) * h_value(b, x) - float(b.p @ f_x) - b.q_next + noise_term
    return CbfRow(coeff_u=b.p @ g_x, coeff_zeta=1.0, rhs=float(rhs))


@dataclass
class QpProblem:
    u_ref: np.ndarray
    barriers: Sequence[AffineBarrier]
    f_x: np.ndarray
    g_x: np.ndarray
    x: np.ndarray
    big_m: float = DEFAULT_BIG_M
    noise_term: np.ndarray | float = 0.0
    input_box: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.u_ref = np.atleast_1d(np.asarray(self.u_ref, dtype=float))
        self.f_x = np.atleast_1d(np.asarray(self.f_x, dtype=float))
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.g_x = np.asarray(self.g_x, dtype=float).reshape(self.x.shape[0], self.u_ref.shape[0])
        if self.big_m <= 0:
            raise ValueError("big_m must be positive")
        nt = np.broadcast_to(np.asarray(self.noise_term, dtype=float), (len(self.barriers),))
        if np.any(nt < 0):
            raise ValueError("noise_term must be non-negative")
        self.noise_term = nt.copy()

    def rows(self, with_noise: bool = True) -> tuple[np.ndarray, np.ndarray]:
        m = self.u_ref.shape[0]
        A = np.zeros((len(self.barriers), m))
        c = np.zeros(len(self.barriers))
        for i, b in enumerate(self.barriers):
            row = cbf_row(b, self.f_x, self.g_x, self.x, self.noise_term[i] if with_noise else 0.0)
            A[i], c[i] = row.coeff_u, row.rhs
        return A, c

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.u_ref.shape[0]
        if self.input_box is None:
            return np.full(m, -np.inf), np.full(m, np.inf)
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (m,)) for v in self.input_box)
        return lo, hi


@dataclass
class QpSolution:
    u: np.ndarray
    zeta: float
    feasible: bool
    objective: float


@lru_cache(maxsize=None)
def _pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.array(list(itertools.combinations(range(n), 2)), dtype=int).reshape(-1, 2)
    return idx[:, 0], idx[:, 1]


def _face_minimisers(T, A, C):
    """Closed-form minimisers of ``||u - T||^2`` on faces of ``{A_i u = C_i}``.

    ``T`` has shape ``(..., m)``, ``A`` ``(..., R, m)``, ``C`` ``(..., R)``.
    Faces are the empty set, every single row and (for m == 2) every pair of
    rows.  Returns candidates ``(..., F, m)`` and a validity mask ``(..., F)``.
    """
    m = T.shape[-1]
    cands = [T[..., None, :]]
    valid = [np.ones(T.shape[:-1] + (1,), dtype=bool)]

    nrm2 = np.einsum("...rj,...rj->...r", A, A)
    ok1 = nrm2 > 1e-300
    resid = C - np.einsum("...rj,...j->...r", A, T)
    scale = np.where(ok1, resid / np.where(ok1, nrm2, 1.0), 0.0)
    cands.append(T[..., None, :] + scale[..., None] * A)
    valid.append(ok1)

    if m == 2 and A.shape[-2] >= 2:
        i, j = _pairs(A.shape[-2])
        a1, a2 = A[..., i, :], A[..., j, :]
        c1, c2 = C[..., i], C[..., j]
        det = a1[..., 0] * a2[..., 1] - a1[..., 1] * a2[..., 0]
        size = np.sqrt(nrm2[..., i] * nrm2[..., j])
        ok2 = np.abs(det) > 1e-12 * np.maximum(size, 1e-300)
        d = np.where(ok2, det, 1.0)
        u0 = (c1 * a2[..., 1] - c2 * a1[..., 1]) / d
        u1 = (a1[..., 0] * c2 - a2[..., 0] * c1) / d
        cands.append(np.stack([u0, u1], axis=-1))
        valid.append(ok2 & ok1[..., i] & ok1[..., j])
    elif m > 2:
        raise NotImplementedError("face enumeration is implemented for at most two inputs")
    return np.concatenate(cands, axis=-2), np.concatenate(valid, axis=-1)


def solve_batch(A, c, u_ref, lower, upper, *, relaxed: bool, big_m: float = DEFAULT_BIG_M,
                row_mask=None, tol: float = FEAS_TOL):
    """Solve a batch of CBF-QPs sharing one row layout.

    Parameters
    ----------
    A, c : arrays ``(B, K, m)`` and ``(B, K)``
        CBF rows ``A u (+ zeta) >= c``.
    u_ref, lower, upper : arrays ``(B, m)``
        Reference and input box (infinite bounds allowed).
    relaxed : bool
        Add the shared slack ``zeta >= 0`` with penalty ``big_m``.
    row_mask : bool array ``(B, K)``, optional
        Rows to ignore are ``False``.

    Returns
    -------
    u ``(B, m)``, zeta ``(B,)``, feasible ``(B,)``, objective ``(B,)``
    """
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    B, K, m = A.shape
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (B, m))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (B, m))
    mask = np.ones((B, K), dtype=bool) if row_mask is None else np.asarray(row_mask, dtype=bool)
    A = np.where(mask[..., None], A, 0.0)
    c = np.where(mask, c, 0.0)

    # the reference is optimal whenever it is feasible
    row_tol = tol * (1.0 + np.max(np.abs(c), axis=-1, initial=0.0))
    in_box_ref = np.all((u_ref >= lower) & (u_ref <= upper), axis=-1)
    ref_slack = np.max(np.where(mask, c - np.einsum("bkj,bj->bk", A, u_ref), -np.inf), axis=-1, initial=-np.inf)
    ref_ok = in_box_ref & (ref_slack <= row_tol)
    if np.any(ref_ok):
        u = u_ref.copy()
        z = np.zeros(B)
        feas = np.ones(B, dtype=bool)
        obj = np.zeros(B)
        rest = np.flatnonzero(~ref_ok)
        if len(rest):
            u[rest], z[rest], feas[rest], obj[rest] = solve_batch(
                A[rest], c[rest], u_ref[rest], lower[rest], upper[rest], relaxed=relaxed, big_m=big_m,
                row_mask=mask[rest], tol=tol)
        return u, z, feas, obj

    # drop inactive rows: sort active rows first and truncate to the widest problem
    if K:
        order = np.argsort(~mask, axis=1, kind="stable")
        K = int(mask.sum(axis=1).max())
        order = order[:, :K]
        A = np.take_along_axis(A, order[..., None], axis=1)
        c = np.take_along_axis(c, order, axis=1)
        mask = np.take_along_axis(mask, order, axis=1)

    # box faces as rows e_j.u >= lo_j and -e_j.u >= -hi_j
    eye = np.eye(m)
    box_A = np.broadcast_to(np.concatenate([eye, -eye]), (B, 2 * m, m))
    box_c = np.concatenate([np.where(np.isfinite(lower), lower, 0.0),
                            -np.where(np.isfinite(upper), upper, 0.0)], axis=-1)
    box_ok = np.concatenate([np.isfinite(lower), np.isfinite(upper)], axis=-1)
    box_A = np.where(box_ok[..., None], box_A, 0.0)

    rows_A = np.concatenate([A, box_A], axis=1)
    rows_c = np.concatenate([c, box_c], axis=1)
    cand, cvalid = _face_minimisers(u_ref, rows_A, rows_c)
    strict = _pick(cand, cvalid, A, c, mask, u_ref, lower, upper, relaxed=False, big_m=big_m, tol=tol)
    if not relaxed or K == 0:
        return strict[:4]

    # a strict optimum whose constraint multipliers sum to at most big_m also solves the relaxed problem
    u_s, _, feas_s, obj_s, pick = strict
    done = feas_s & _multipliers_within(pick, u_s, u_ref, rows_A, K, big_m)
    if np.all(done):
        return u_s, np.zeros(B), feas_s, obj_s
    idx = np.flatnonzero(~done)
    A, c, mask, u_ref, lower, upper = A[idx], c[idx], mask[idx], u_ref[idx], lower[idx], upper[idx]
    rows_A, rows_c, cand, cvalid = rows_A[idx], rows_c[idx], cand[idx], cvalid[idx]
    b = len(idx)

    # faces where row i0 carries the slack: zeta = c_i0 - a_i0.u eliminates zeta
    T = u_ref[:, None, :] + 0.5 * big_m * A
    others = np.array([[j for j in range(K + 2 * m) if j != i0] for i0 in range(K)], dtype=int)
    dA = rows_A[:, others, :].copy()
    dc = rows_c[:, others].copy()
    soft = others < K
    dA = np.where(soft[None, ..., None], dA - A[:, :, None, :], dA)
    dc = np.where(soft[None], dc - c[:, :, None], dc)
    rc, rvalid = _face_minimisers(T, dA, dc)
    rvalid &= mask[:, :, None]
    cand = np.concatenate([cand, rc.reshape(b, -1, m)], axis=1)
    cvalid = np.concatenate([cvalid, rvalid.reshape(b, -1)], axis=1)
    u_r, z_r, feas_r, obj_r, _ = _pick(cand, cvalid, A, c, mask, u_ref, lower, upper, relaxed=True,
                                       big_m=big_m, tol=tol)
    u_out, z_out, f_out, o_out = u_s.copy(), np.zeros(B), feas_s.copy(), obj_s.copy()
    u_out[idx], z_out[idx], f_out[idx], o_out[idx] = u_r, z_r, feas_r, obj_r
    return u_out, z_out, f_out, o_out


def _multipliers_within(pick, u, u_ref, rows_A, K: int, big_m: float, tol: float = 1e-9) -> np.ndarray:
    """KKT check for the face a strict optimum came from (two inputs).

    Recovers the multipliers of the one or two active rows from
    ``2 (u - u_ref) = sum lambda_i a_i`` and accepts when they are
    non-negative, reproduce the gradient and the CBF-row multipliers sum to at
    most ``big_m``.  Anything else (clipped candidates, degenerate faces) is
    left to the full relaxed enumeration.
    """
    B, R, m = rows_A.shape
    if m != 2:
        return np.zeros(B, dtype=bool)
    g = 2.0 * (np.nan_to_num(u) - u_ref)
    rows = np.arange(B)
    gscale = 1.0 + np.linalg.norm(g, axis=-1)
    ok = pick == 0
    ok &= np.linalg.norm(g, axis=-1) <= tol * gscale

    single = (pick >= 1) & (pick <= R)
    r = np.clip(pick - 1, 0, R - 1)
    a = rows_A[rows, r]
    n2 = np.maximum(np.einsum("bj,bj->b", a, a), 1e-300)
    lam = np.einsum("bj,bj->b", g, a) / n2
    res = np.linalg.norm(g - lam[:, None] * a, axis=-1)
    soft = np.where(r < K, lam, 0.0)
    ok1 = single & (lam >= -tol * gscale) & (res <= 1e-7 * gscale) & (soft <= big_m)

    ok2 = np.zeros(B, dtype=bool)
    if R >= 2:
        pi, pj = _pairs(R)
        q = np.clip(pick - R - 1, 0, len(pi) - 1)
        i, j = pi[q], pj[q]
        a1, a2 = rows_A[rows, i], rows_A[rows, j]
        det = a1[:, 0] * a2[:, 1] - a1[:, 1] * a2[:, 0]
        good = np.abs(det) > 1e-12
        d = np.where(good, det, 1.0)
        l1 = (g[:, 0] * a2[:, 1] - g[:, 1] * a2[:, 0]) / d
        l2 = (a1[:, 0] * g[:, 1] - a1[:, 1] * g[:, 0]) / d
        soft = np.where(i < K, l1, 0.0) + np.where(j < K, l2, 0.0)
        ok2 = (pick > R) & good & (l1 >= -tol * gscale) & (l2 >= -tol * gscale) & (soft <= big_m)
    return ok | ok1 | ok2


def _pick(cand, cvalid, A, c, mask, u_ref, lower, upper, *, relaxed: bool, big_m: float, tol: float):
    """Evaluate every candidate with the true objective and return the best per problem."""
    B, _, m = cand.shape
    K = A.shape[1]
    cand = np.where(cvalid[..., None], cand, 0.0)
    lo_t = np.where(np.isfinite(lower), lower - tol * (1.0 + np.abs(lower)), -np.inf)
    hi_t = np.where(np.isfinite(upper), upper + tol * (1.0 + np.abs(upper)), np.inf)
    in_box = np.all((cand >= lo_t[:, None, :]) & (cand <= hi_t[:, None, :]), axis=-1)
    cand = np.clip(cand, np.where(np.isfinite(lower), lower, -np.inf)[:, None, :],
                   np.where(np.isfinite(upper), upper, np.inf)[:, None, :])

    viol = c[:, None, :] - np.einsum("bkj,bfj->bfk", A, cand)
    viol = np.where(mask[:, None, :], viol, -np.inf)
    slack_need = np.max(viol, axis=-1, initial=-np.inf) if K else np.full(cand.shape[:2], -np.inf)
    row_tol = tol * (1.0 + np.max(np.where(mask, np.abs(c), 0.0), axis=-1, initial=0.0))
    dist = np.sum((cand - u_ref[:, None, :]) ** 2, axis=-1)
    if relaxed:
        zeta = np.maximum(slack_need, 0.0)
        zeta = np.where(zeta <= row_tol[:, None], 0.0, zeta)
        obj = dist + big_m * zeta
        ok = cvalid & in_box
    else:
        zeta = np.zeros_like(dist)
        obj = dist
        ok = cvalid & in_box & (slack_need <= row_tol[:, None])
    obj = np.where(ok, obj, np.inf)

    best = np.min(obj, axis=1)
    # min-norm tie-break among numerically equal optima
    near = obj <= best[:, None] + 1e-12 * (1.0 + np.abs(best[:, None]))
    norms = np.where(near, np.sum(cand ** 2, axis=-1), np.inf)
    pick = np.argmin(norms, axis=1)
    rows = np.arange(B)
    feasible = np.isfinite(best)
    u = np.where(feasible[:, None], cand[rows, pick], np.nan)
    z = np.where(feasible, zeta[rows, pick], np.nan)
    return u, z, feasible, np.where(feasible, best, np.inf), pick


def _solve_one(problem: QpProblem, *, relaxed: bool, with_noise: bool) -> QpSolution:
    A, c = problem.rows(with_noise=with_noise)
    lo, hi = problem.box()
    u, z, feas, obj = solve_batch(A[None], c[None], problem.u_ref[None], lo[None], hi[None],
                                  relaxed=relaxed, big_m=problem.big_m)
    if not feas[0]:
        return QpSolution(u=np.full(problem.u_ref.shape, np.nan), zeta=float("nan"),
                          feasible=False, objective=float("inf"))
    return QpSolution(u=u[0], zeta=float(z[0]), feasible=True, objective=float(obj[0]))


def solve_strict(problem: QpProblem) -> QpSolution:
    """Hard-constrained QP (slack fixed at zero).

    The rows include ``problem.noise_term``; leave it at zero for the nominal
    problem.  Infeasibility is reported through ``feasible=False``.
    """
    return _solve_one(problem, relaxed=False, with_noise=True)


def solve_relaxed(problem: QpProblem) -> QpSolution:
    return _solve_one(problem, relaxed=True, with_noise=False)


def solve_noise_robust(problem: QpProblem) -> QpSolution:
    return _solve_one(problem, relaxed=True, with_noise=True)


@dataclass
class InvarianceCertificate:
    z_max: float
    shifted_offset: float
    holds: bool
    first_violation: int | None = None
    min_shifted_h: float = float("inf")


def certify_forward_invariance(trajectory, barriers: Sequence[AffineBarrier], z_max: float = 0.0,
                               tol: float = 1e-9) -> InvarianceCertificate:
    """Check ``h(x_t) + Z/eta >= 0`` and the one-step decay on a recorded trajectory.

    The offset ``Z/eta`` is computed per barrier.  ``first_violation`` is the
    index of the first offending state.
    """
    X = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty trajectory")
    if z_max < 0:
        raise ValueError("z_max must be non-negative")
    offsets = []
    for b in barriers:
        if z_max > 0 and b.eta == 0:
            raise ZeroDivisionError("Z/eta undefined for eta = 0 with positive slack bound")
        offsets.append(z_max / b.eta if z_max > 0 else 0.0)
    offsets = np.asarray(offsets)
    P = np.stack([b.p for b in barriers])
    q = np.array([b.q for b in barriers])
    eta = np.array([b.eta for b in barriers])
    hs = X @ P.T + q + offsets

    bad = np.any(hs < -tol, axis=1)
    if len(X) > 1:
        decay_bad = np.any(hs[1:] < (1.0 - eta) * hs[:-1] - tol, axis=1)
        bad[1:] |= decay_bad
    first = int(np.argmax(bad)) if np.any(bad) else None
    return InvarianceCertificate(z_max=float(z_max), shifted_offset=float(np.max(offsets, initial=0.0)),
                                 holds=first is None, first_violation=first,
                                 min_shifted_h=float(hs.min()))


@dataclass
class QpTrace:
    """Append-only JSONL log of per-solve records for override accounting."""

    stream: IO[str] | None = None
    records: list = field(default_factory=list)

    def log(self, t: int, vehicle: int, action: str, feasible: bool, zeta: float, objective: float,
            proposed: str | None = None, epoch: int | None = None):
        rec = {"t": int(t), "vehicle": int(vehicle), "action": action, "feasible": bool(feasible),
               "zeta": None if not np.isfinite(zeta) else float(zeta),
               "objective": None if not np.isfinite(objective) else float(objective)}
        if proposed is not None:
            rec["proposed"] = proposed
        if epoch is not None:
            rec["epoch"] = int(epoch)
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(json.dumps(rec, sort_keys=True) + "\n")

    @staticmethod
    def read(path) -> list[dict]:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
