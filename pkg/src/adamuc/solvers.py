"""Small dense solvers used by the projections.

* :func:`solve_lp` wraps the HiGHS dual simplex shipped with scipy and
  certifies the answer with an independent KKT check.
* :func:`solve_qp` is a primal active-set method for convex QPs.
* :func:`solve_device_milp` finds the exact binary projection of one
  device by best-first search over on/off sequences.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr
from scipy.optimize import linprog

from .case import RESERVE_PRODUCTS

FEAS_TOL = 1e-9


def _dense(A, ncol):
    if A is None:
        return np.zeros((0, ncol))
    if sp.issparse(A):
        return A.toarray()
    return np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, ncol)


def _vec(b, n):
    return np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(n)


# ----------------------------------------------------------------------------
# LP

@dataclass
class LpProblem:
    """min c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub."""
    c: np.ndarray
    A_ub: object = None
    b_ub: np.ndarray | None = None
    A_eq: object = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | float | None = 0.0
    ub: np.ndarray | float | None = None


@dataclass
class LpResult:
    x: np.ndarray | None
    objective: float
    status: str  # optimal | infeasible | unbounded | error
    primal_residual: float = np.inf
    kkt_residual: float = np.inf
    message: str = ""
    duals_ub: np.ndarray | None = None
    duals_eq: np.ndarray | None = None


def _bounds(lb, ub, n):
    lb = np.full(n, -np.inf) if lb is None else np.broadcast_to(np.asarray(lb, float), (n,))
    ub = np.full(n, np.inf) if ub is None else np.broadcast_to(np.asarray(ub, float), (n,))
    return np.array(lb, dtype=float), np.array(ub, dtype=float)


def solve_lp(prob: LpProblem, tol: float = 1e-10) -> LpResult:
    c = np.asarray(prob.c, dtype=float)
    n = c.size
    lb, ub = _bounds(prob.lb, prob.ub, n)
    A_ub = prob.A_ub if prob.A_ub is not None and prob.A_ub.shape[0] else None
    A_eq = prob.A_eq if prob.A_eq is not None and prob.A_eq.shape[0] else None
    res = linprog(
        c, A_ub=A_ub, b_ub=prob.b_ub if A_ub is not None else None,
        A_eq=A_eq, b_eq=prob.b_eq if A_eq is not None else None,
        bounds=np.column_stack([np.where(np.isfinite(lb), lb, None),
                                np.where(np.isfinite(ub), ub, None)]),
        method="highs-ds",
        options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol})
    if res.status == 2:
        return LpResult(None, np.nan, "infeasible", message=res.message)
    if res.status == 3:
        return LpResult(None, np.nan, "unbounded", message=res.message)
    if res.status != 0:
        return LpResult(None, np.nan, "error", message=res.message)
    x = res.x
    # independent certificate: primal residual and stationarity with the marginals
    prim = max(0.0, float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
    grad = c.copy()
    mu_ub = mu_eq = None
    if A_ub is not None:
        prim = max(prim, float(np.max(A_ub @ x - prob.b_ub, initial=0.0)))
        mu_ub = res.ineqlin.marginals
        grad -= A_ub.T @ mu_ub
    if A_eq is not None:
        prim = max(prim, float(np.max(np.abs(A_eq @ x - prob.b_eq), initial=0.0)))
        mu_eq = res.eqlin.marginals
        grad -= A_eq.T @ mu_eq
    grad -= res.lower.marginals + res.upper.marginals
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    kkt = float(np.abs(grad).max(initial=0.0)) / scale
    return LpResult(x, float(res.fun), "optimal", prim, kkt, res.message, mu_ub, mu_eq)


# ----------------------------------------------------------------------------
# QP

@dataclass
class QpProblem:
    """min 1/2 x^T Q x + c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub."""
    Q: np.ndarray
    c: np.ndarray
    A_ub: object = None
    b_ub: np.ndarray | None = None
    A_eq: object = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | float | None = None
    ub: np.ndarray | float | None = None


@dataclass
class QpResult:
    x: np.ndarray | None
    objective: float
    status: str
    iterations: int = 0
    kkt_residual: float = np.inf
    message: str = ""
    multipliers: dict = field(default_factory=dict)


def _independent_rows(A, b, tol=1e-10):
    """Drop linearly dependent equality rows (QR with column pivoting on A^T)."""
    if A.shape[0] == 0:
        return A, b
    _, R, piv = qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, diag.max(initial=0.0))))
    keep = np.sort(piv[:rank])
    return A[keep], b[keep]


def solve_qp(prob: QpProblem, x0: np.ndarray | None = None, max_iter: int | None = None,
             tol: float = 1e-10) -> QpResult:
    """Primal active-set method.

    A feasible start comes from ``x0`` if it is feasible, otherwise from a
    phase-one LP.  The working set starts empty; at each stationary point
    the most negative multiplier leaves (lowest index on ties) and blocking
    constraints enter by the ratio test (lowest index on ties).
    """
    Q = np.asarray(prob.Q, dtype=float)
    c = np.asarray(prob.c, dtype=float)
    n = c.size
    lb, ub = _bounds(prob.lb, prob.ub, n)
    fixed = lb == ub
    if fixed.any():
        return _solve_reduced(prob, Q, c, lb, ub, fixed, x0, max_iter, tol)
    A_ub = _dense(prob.A_ub, n)
    b_ub = _vec(prob.b_ub, A_ub.shape[0])
    A_eq = _dense(prob.A_eq, n)
    b_eq = _vec(prob.b_eq, A_eq.shape[0])
    # bounds become inequality rows
    eye = np.eye(n)
    fl, fu = np.isfinite(lb), np.isfinite(ub)
    G = np.vstack([A_ub, -eye[fl], eye[fu]])
    h = np.concatenate([b_ub, -lb[fl], ub[fu]])
    Aeq, beq = _independent_rows(A_eq, b_eq)
    m = G.shape[0]

    def feasible(z):
        ok = np.all(G @ z <= h + 1e-9) if m else True
        return ok and (Aeq.shape[0] == 0 or np.all(np.abs(Aeq @ z - beq) <= 1e-9))

    if x0 is not None and feasible(np.asarray(x0, dtype=float)):
        x = np.asarray(x0, dtype=float).copy()
    else:
        ph1 = solve_lp(LpProblem(np.zeros(n), sp.csr_matrix(A_ub) if A_ub.shape[0] else None,
                                 b_ub, sp.csr_matrix(A_eq) if A_eq.shape[0] else None, b_eq,
                                 lb, ub))
        if ph1.status != "optimal":
            return QpResult(None, np.nan, "infeasible" if ph1.status == "infeasible" else "error",
                            message=ph1.message)
        x = ph1.x
    max_iter = max_iter or 50 * (n + m + 10)
    W: list[int] = []
    scale = max(1.0, np.abs(Q).max(initial=0.0), np.abs(c).max(initial=0.0))
    lam = np.zeros(Aeq.shape[0])
    mu = np.zeros(0)
    status = "error"
    it = 0
    for it in range(1, max_iter + 1):
        g = Q @ x + c
        A_act = np.vstack([Aeq, G[W]]) if W else Aeq
        p, ray = _eq_step(Q, g, A_act, scale)
        if np.linalg.norm(p, np.inf) <= tol * max(1.0, np.linalg.norm(x, np.inf)):
            if A_act.shape[0]:
                mult = np.linalg.lstsq(A_act.T, -g, rcond=None)[0]
            else:
                mult = np.zeros(0)
            lam, mu = mult[: Aeq.shape[0]], mult[Aeq.shape[0]:]
            if mu.size == 0 or mu.min() >= -1e-9 * scale:
                status = "optimal"
                break
            drop = int(np.argmin(mu))  # first index among ties
            W.pop(drop)
            continue
        Gp = G @ p if m else np.zeros(0)
        step, block = (np.inf if ray else 1.0), -1
        inW = np.zeros(m, dtype=bool)
        inW[W] = True
        cand = np.nonzero(~inW & (Gp > 1e-12 * max(1.0, np.abs(p).max())))[0]
        if cand.size:
            ratios = np.maximum(h[cand] - G[cand] @ x, 0.0) / Gp[cand]
            k = int(np.argmin(ratios))
            if ratios[k] < step:
                step, block = float(ratios[k]), int(cand[k])
        if not np.isfinite(step):
            return QpResult(None, -np.inf, "unbounded", it)
        x = x + step * p
        if block >= 0:
            W.append(block)
    else:
        return QpResult(x, float(0.5 * x @ Q @ x + c @ x), "error", it,
                        message="iteration limit")
    full_mu = np.zeros(m)
    full_mu[W] = mu if len(W) else 0.0
    r = Q @ x + c + (Aeq.T @ lam if Aeq.shape[0] else 0.0) + (G.T @ full_mu if m else 0.0)
    kkt = float(np.abs(r).max(initial=0.0)) / scale
    return QpResult(x, float(0.5 * x @ Q @ x + c @ x), status, it, kkt,
                    multipliers={"eq": lam, "ineq": full_mu[: A_ub.shape[0]]})


def _solve_reduced(prob, Q, c, lb, ub, fixed, x0, max_iter, tol):
    """Substitute variables with lb == ub and solve over the rest."""
    n = c.size
    free = ~fixed
    xf = lb[fixed]
    A_ub = _dense(prob.A_ub, n)
    b_ub = _vec(prob.b_ub, A_ub.shape[0])
    A_eq = _dense(prob.A_eq, n)
    b_eq = _vec(prob.b_eq, A_eq.shape[0])
    sub = QpProblem(Q[np.ix_(free, free)], c[free] + Q[np.ix_(free, fixed)] @ xf,
                    A_ub[:, free], b_ub - A_ub[:, fixed] @ xf,
                    A_eq[:, free], b_eq - A_eq[:, fixed] @ xf, lb[free], ub[free])
    res = solve_qp(sub, None if x0 is None else np.asarray(x0, float)[free], max_iter, tol)
    if res.x is None:
        return res
    x = np.empty(n)
    x[fixed] = xf
    x[free] = res.x
    res.x = x
    res.objective = float(0.5 * x @ Q @ x + c @ x)
    return res


def _eq_step(Q, g, A, scale):
    """Minimise 1/2 p^T Q p + g^T p on the null space of A.

    Returns (p, is_ray); a ray is a zero-curvature descent direction.
    """
    n = g.size
    if A.shape[0]:
        Qf, R = qr(A.T, mode="full")
        d = np.abs(np.diag(R)) if R.size else np.zeros(0)
        r = int(np.sum(d > 1e-12 * max(1.0, d.max(initial=0.0))))
        Z = Qf[:, r:]
    else:
        Z = np.eye(n)
    if Z.shape[1] == 0:
        return np.zeros(n), False
    H = Z.T @ Q @ Z
    gz = Z.T @ g
    try:
        cf = cho_factor(H, lower=True)
        if np.min(np.abs(np.diag(cf[0]))) > 1e-10 * np.sqrt(scale):
            return -Z @ cho_solve(cf, gz), False
    except LinAlgError:
        pass
    w, V = np.linalg.eigh(H)
    flat = w <= 1e-10 * scale
    gn = V[:, flat].T @ gz
    if flat.any() and np.linalg.norm(gn) > 1e-12 * max(1.0, np.linalg.norm(g)):
        return -Z @ (V[:, flat] @ gn), True
    inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, w))
    return -Z @ (V @ (inv * (V.T @ gz))), False


# ----------------------------------------------------------------------------
# device binary projection

@dataclass
class DeviceProblem:
    """One device's binary projection problem.

    Targets (``*_ref``) come from the relaxed trajectory; ``fixed`` holds
    0/1 for pinned periods and NaN for free ones.  Row coefficients follow
    the sign convention ``s = +1`` producer, ``-1`` consumer.
    """
    s: float
    u0: int
    p0: float
    min_up: int
    min_down: int
    init_dwell: int
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    r_max: np.ndarray  # (10,)
    ramp_up: float
    ramp_down: float
    ramp_su: float
    ramp_sd: float
    u_ref: np.ndarray
    p_ref: np.ndarray
    q_ref: np.ndarray
    r_ref: np.ndarray  # (T, 10)
    fixed: np.ndarray | None = None
    w_u: float = 1.0
    w_p: float = 1.0
    w_q: float = 0.1
    w_r: float = 1.0

    @property
    def T(self) -> int:
        return len(self.u_ref)

    @property
    def caps(self):
        pr = self.s > 0
        A_up = self.p_max if pr else -self.p_min
        A_dn = -self.p_min if pr else self.p_max
        B_up = self.q_max if pr else -self.q_min
        B_dn = -self.q_min if pr else self.q_max
        return A_up, A_dn, B_up, B_dn


@dataclass
class DeviceSolution:
    u: np.ndarray | None
    p_on: np.ndarray | None
    q: np.ndarray | None
    r: np.ndarray | None
    objective: float
    status: str  # optimal | feasible | infeasible
    n_lp: int = 0


_RI = {p: k for k, p in enumerate(RESERVE_PRODUCTS)}
_UP = [_RI[p] for p in ("rgu", "scr", "rru_on")]
_DN = [_RI[p] for p in ("rgd", "rrd_on")]
_ONLINE = _UP + _DN + [_RI["qru"], _RI["qrd"]]


def switch_count(u, u0) -> int:
    prev = np.concatenate([[u0], u[:-1]])
    return int(np.sum(np.asarray(u) != prev))


def sequence_allowed(prob: DeviceProblem, u) -> bool:
    """Min up/down feasibility (with the pre-horizon dwell) and pinned entries."""
    if prob.fixed is not None:
        f = prob.fixed
        pinned = ~np.isnan(f)
        if np.any(np.asarray(u)[pinned] != f[pinned]):
            return False
    state, dwell = prob.u0, prob.init_dwell
    for ut in u:
        if ut != state:
            need = prob.min_up if state == 1 else prob.min_down
            if dwell < need:
                return False
            state, dwell = ut, 1
        else:
            dwell += 1
    return True


def _targets(prob: DeviceProblem):
    """Bounds, targets clipped into the box, weights and the unclipped targets."""
    T = prob.T
    lo = np.concatenate([prob.p_min, prob.q_min, np.zeros(10 * T)])
    hi = np.concatenate([prob.p_max, prob.q_max, np.tile(prob.r_max, T)])
    ref = np.concatenate([prob.p_ref, prob.q_ref, np.asarray(prob.r_ref).ravel()])
    w = np.concatenate([np.full(T, prob.w_p), np.full(T, prob.w_q), np.full(10 * T, prob.w_r)])
    return lo, hi, np.clip(ref, lo, hi), w, ref


def device_lp(prob: DeviceProblem, u) -> tuple[float, np.ndarray | None]:
    """Continuous l1 projection for a fixed on/off sequence.

    Variables are split deviations ``x = ref + dp - dm``; returns
    (objective, x) with x ordered as [p_on (T), q (T), r (T x 10)].
    """
    T = prob.T
    u = np.asarray(u, dtype=float)
    lo, hi, ref, w, raw = _targets(prob)
    # an off period delivers nothing, so its power targets cost their full
    # magnitude and p_on, q there are free
    on = np.concatenate([u, u, np.ones(10 * T)])
    w = w * on
    const = float(w @ np.abs(raw - ref))
    const += float((1 - u) @ (prob.w_p * np.abs(prob.p_ref) + prob.w_q * np.abs(prob.q_ref)))
    nx = ref.size
    A_up, A_dn, B_up, B_dn = prob.caps
    s = prob.s
    rows, cols, vals, rhs = [], [], [], []
    r_off = 2 * T

    def add(coefs, b):
        rows.extend([len(rhs)] * len(coefs))
        for j, v in coefs:
            cols.append(j)
            vals.append(v)
        rhs.append(b)

    for t in range(T):
        ri = lambda k: r_off + 10 * t + k  # noqa: E731
        add([(t, s * u[t])] + [(ri(k), 1.0) for k in _UP], u[t] * A_up[t])
        add([(t, -s * u[t])] + [(ri(k), 1.0) for k in _DN], u[t] * A_dn[t])
        add([(T + t, s * u[t]), (ri(_RI["qru"]), 1.0)], u[t] * B_up[t])
        add([(T + t, -s * u[t]), (ri(_RI["qrd"]), 1.0)], u[t] * B_dn[t])
        add([(ri(_RI["nsc"]), 1.0), (ri(_RI["rru_off"]), 1.0)], (1 - u[t]) * prob.p_max[t])
        add([(ri(_RI["rrd_off"]), 1.0)], (1 - u[t]) * prob.p_max[t])
        uprev = prob.u0 if t == 0 else u[t - 1]
        su, sd = max(u[t] - uprev, 0.0), max(uprev - u[t], 0.0)
        up_rhs = prob.ramp_up + su * prob.ramp_su
        dn_rhs = prob.ramp_down + sd * prob.ramp_sd
        if t == 0:
            P0 = prob.u0 * prob.p0
            add([(0, u[0])], up_rhs + P0)
            add([(0, -u[0])], dn_rhs - P0)
        else:
            add([(t, u[t]), (t - 1, -u[t - 1])], up_rhs)
            add([(t, -u[t]), (t - 1, u[t - 1])], dn_rhs)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), nx))
    b = np.asarray(rhs) - A @ ref
    Asplit = sp.hstack([A, -A]).tocsr()
    res = solve_lp(LpProblem(np.concatenate([w, w]), Asplit, b, None, None,
                             0.0, np.concatenate([hi - ref, ref - lo])))
    if res.status != "optimal":
        return np.inf, None
    x = ref + res.x[:nx] - res.x[nx:]
    x = np.clip(x, lo, hi)
    return float(res.objective) + const, x


def period_lower_bound(prob: DeviceProblem, t: int, ut: int) -> float:
    """Exact per-period minimum of the continuous cost, ignoring ramp rows."""
    lo, hi, ref, w, _ = _targets(prob)
    T = prob.T
    p0, q0 = ref[t], ref[T + t]
    r0 = ref[2 * T + 10 * t: 2 * T + 10 * (t + 1)]
    wr = prob.w_r
    pmax = prob.p_max[t]
    bin_cost = prob.w_u * abs(ut - prob.u_ref[t])
    if ut == 0:
        cost = prob.w_p * abs(prob.p_ref[t]) + prob.w_q * abs(prob.q_ref[t])
        cost += wr * r0[_ONLINE].sum()
        cost += wr * max(0.0, r0[_RI["nsc"]] + r0[_RI["rru_off"]] - pmax)
        cost += wr * max(0.0, r0[_RI["rrd_off"]] - pmax)
        return bin_cost + cost
    cost = wr * (r0[_RI["nsc"]] + r0[_RI["rru_off"]] + r0[_RI["rrd_off"]])
    A_up, A_dn, B_up, B_dn = (c[t] for c in prob.caps)
    s = prob.s

    def best(x0, xlo, xhi, U, D, cu, cd, wx):
        def f(x):
            return wx * abs(x - x0) + wr * max(0.0, U - (cu - s * x)) + wr * max(0.0, D - (cd + s * x))
        cands = [x0, xlo, xhi, (cu - U) / s, (D - cd) / s]
        return min(f(min(max(x, xlo), xhi)) for x in cands)

    U = r0[_UP].sum()
    D = r0[_DN].sum()
    cost += best(p0, prob.p_min[t], prob.p_max[t], U, D, A_up, A_dn, prob.w_p)
    cost += best(q0, prob.q_min[t], prob.q_max[t], r0[_RI["qru"]], r0[_RI["qrd"]],
                 B_up, B_dn, prob.w_q)
    return bin_cost + cost


def _better(cost, u, u0, best_cost, best_u, tol=1e-9):
    if best_u is None or cost < best_cost - tol:
        return True
    if cost > best_cost + tol:
        return False
    key = (switch_count(u, u0), tuple(u))
    return key < (switch_count(best_u, u0), tuple(best_u))


def solve_device_milp(prob: DeviceProblem, max_lp: int = 500) -> DeviceSolution:
    """Exact binary projection by best-first search over on/off sequences.

    Per-period lower bounds (ramp rows dropped) feed a backward dynamic
    program over (t, status, dwell).  Complete sequences then come out in
    order of their bound; each is priced with the exact continuous LP and
    the search stops once the next bound exceeds the incumbent.  Ties go
    to fewer switches, then the lexicographically smaller sequence.
    """
    T = prob.T
    cap = max(prob.min_up, prob.min_down, 1)
    lb = np.array([[period_lower_bound(prob, t, u) for u in (0, 1)] for t in range(T)])
    fixed = prob.fixed if prob.fixed is not None else np.full(T, np.nan)

    def nxt(state, dwell, ut):
        if ut == state:
            return ut, min(dwell + 1, cap)
        need = prob.min_up if state == 1 else prob.min_down
        return (ut, 1) if dwell >= need else None

    # backward DP: h[t][(state, dwell)] = min bound to finish from t
    h = [dict() for _ in range(T + 1)]
    for st in (0, 1):
        for dw in range(1, cap + 1):
            h[T][(st, dw)] = 0.0
    for t in range(T - 1, -1, -1):
        for st in (0, 1):
            for dw in range(1, cap + 1):
                best = np.inf
                for ut in (0, 1):
                    if not np.isnan(fixed[t]) and ut != fixed[t]:
                        continue
                    n = nxt(st, dw, ut)
                    if n is not None:
                        best = min(best, lb[t, ut] + h[t + 1][n])
                h[t][(st, dw)] = best
    start = (prob.u0, min(max(prob.init_dwell, 1), cap))
    if not np.isfinite(h[0][start]):
        return DeviceSolution(None, None, None, None, np.inf, "infeasible")

    counter = itertools.count()
    heap = [(h[0][start], 0, (), next(counter), start, 0.0)]
    best_cost, best_u, best_x = np.inf, None, None
    n_lp = 0
    status = "optimal"
    while heap:
        f, sw, seq, _, node, g = heapq.heappop(heap)
        if f > best_cost + 1e-9:
            break
        t = len(seq)
        if t == T:
            if n_lp >= max_lp:
                status = "feasible"
                break
            cost, x = device_lp(prob, seq)
            cost += prob.w_u * float(np.abs(np.array(seq) - prob.u_ref).sum())
            n_lp += 1
            if x is not None and _better(cost, seq, prob.u0, best_cost, best_u):
                best_cost, best_u, best_x = cost, seq, x
            continue
        for ut in (0, 1):
            if not np.isnan(fixed[t]) and ut != fixed[t]:
                continue
            n = nxt(node[0], node[1], ut)
            if n is None:
                continue
            g2 = g + lb[t, ut]
            f2 = g2 + h[t + 1][n]
            if np.isfinite(f2):
                sw2 = sw + int(ut != node[0])
                heapq.heappush(heap, (f2, sw2, seq + (ut,), next(counter), n, g2))
    if best_u is None:
        return DeviceSolution(None, None, None, None, np.inf, "infeasible", n_lp)
    u = np.array(best_u, dtype=float)
    return DeviceSolution(u, best_x[:T], best_x[T:2 * T], best_x[2 * T:].reshape(T, 10),
                          best_cost, status, n_lp)


def enumerate_device(prob: DeviceProblem) -> DeviceSolution:
    """Reference answer by pricing every allowed sequence (2^T of them)."""
    T = prob.T
    best_cost, best_u, best_x = np.inf, None, None
    n_lp = 0
    for bits in itertools.product((0, 1), repeat=T):
        if not sequence_allowed(prob, bits):
            continue
        cost, x = device_lp(prob, bits)
        n_lp += 1
        if x is None:
            continue
        cost += prob.w_u * float(np.abs(np.array(bits) - prob.u_ref).sum())
        if _better(cost, bits, prob.u0, best_cost, best_u):
            best_cost, best_u, best_x = cost, bits, x
    if best_u is None:
        return DeviceSolution(None, None, None, None, np.inf, "infeasible", n_lp)
    return DeviceSolution(np.array(best_u, float), best_x[:T], best_x[T:2 * T],
                          best_x[2 * T:].reshape(T, 10), best_cost, "optimal", n_lp)
