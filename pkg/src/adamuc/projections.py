"""Projection subproblems that move a relaxed state toward a feasible one.

* :func:`economic_dispatch` - copper-plate LP giving the seed and the bound z_ed.
* :func:`linearized_power_flow` - regularized QP on the linearized AC balance.
* :func:`reserve_cleanup` - reserve LP with injections held fixed.
* :func:`project_device` - exact binary projection of one device.
* :func:`ramp_constrained_pf` - per-period power flow QP that keeps the whole
  trajectory ramp feasible by freezing alternating device groups.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .case import RESERVE_PRODUCTS, ZONE_PRODUCTS, ZONE_PROVIDERS, Case
from .parallel import WorkerPool
from .solvers import (DeviceProblem, DeviceSolution, LpProblem, QpProblem, solve_device_milp,
                      solve_lp, solve_qp)
from .state import FlatState, init_state
from .surplus import SurplusModel, branch_flow_partials, branch_flows, energy_cost

log = logging.getLogger(__name__)

_R = {p: k for k, p in enumerate(RESERVE_PRODUCTS)}
_UP = ("rgu", "scr", "rru_on")
_DN = ("rgd", "rrd_on")


class ProjectionError(RuntimeError):
    pass


@dataclass
class ProjectionConfig:
    """Weights and limits of the power-flow projections.

    ``gamma`` weighs squared deviations of (p, q, v, theta), a linear cost
    term normalized by the largest block price, and an unused hook.
    """
    gamma: tuple = (1.0, 1.0, 1e2, 1e2, 1e-2, 0.0)
    alpha_flow: float = 1.2
    resolves: int = 3
    relax_factor: float = 1.5
    angle_limit: float = math.radians(72.0)
    dc_reg: float = 1e-4
    elastic_price: float = 1e4
    s_guard: float = 1e-6
    device_weights: dict = field(default_factory=lambda: {"u": 1.0, "p": 1.0, "q": 0.1, "r": 0.1})

    def __post_init__(self):
        if len(self.gamma) != 6 or min(self.gamma) < 0:
            raise ValueError("gamma needs six nonnegative weights")
        if self.alpha_flow < 1:
            raise ValueError("alpha_flow must be >= 1")

    def alpha_sequence(self) -> list[float]:
        """Flow multipliers for each re-solve, shrinking geometrically to 1."""
        n = max(1, self.resolves)
        if n == 1:
            return [1.0]
        return [self.alpha_flow ** (1.0 - k / (n - 1)) for k in range(n)]


# ----------------------------------------------------------------------------
# sparse row builder

class _Rows:
    def __init__(self):
        self.r, self.c, self.v, self.b = [], [], [], []

    def add(self, cols, vals, rhs):
        k = len(self.b)
        self.r.extend([k] * len(cols))
        self.c.extend(cols)
        self.v.extend(vals)
        self.b.append(rhs)

    def matrix(self, n):
        return sp.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.b), n)), np.array(self.b)


# ----------------------------------------------------------------------------
# Projection 2: economic dispatch

@dataclass
class DispatchResult:
    state: FlatState
    z_ed: float
    status: str
    heuristic: bool = False
    u: np.ndarray | None = None
    P: np.ndarray | None = None


def _dispatch_lp(case: Case, times: list[int], couple: bool):
    """Copper-plate LP over ``times``.

    Network terms are dropped; system active balance carries a free loss
    variable and a slack priced at ``c_p``, so the optimum bounds the
    market surplus of every solution from above.  Returns (LpResult, unpack).
    """
    a = case.arrays
    m = SurplusModel(case)
    T, nd, M = len(times), a.nd, a.n_blocks
    nz, nk = a.nz, len(ZONE_PRODUCTS)
    off = {}
    n = 0
    for name, size in (("u", T * nd), ("P", T * nd), ("Q", T * nd), ("exc", T * nd),
                       ("blk", T * nd * M), ("r", T * nd * 10), ("su", T * nd), ("sd", T * nd),
                       ("zs", T * nz * nk), ("ep", T), ("em", T), ("loss", T)):
        off[name] = n
        n += size

    def ix(name, t, j=0, k=0):
        if name == "blk":
            return off[name] + (t * nd + j) * M + k
        if name == "r":
            return off[name] + (t * nd + j) * 10 + k
        if name == "zs":
            return off[name] + (t * nz + j) * nk + k
        if name in ("ep", "em", "loss"):
            return off[name] + t
        return off[name] + t * nd + j

    c = np.zeros(n)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    ub[off["u"]: off["u"] + T * nd] = 1.0
    lb[off["P"]: off["P"] + 2 * T * nd] = -np.inf
    if np.any(a.g < 0) or np.any(a.sh_g < 0):
        lb[off["loss"]: off["loss"] + T] = -np.inf  # losses may be negative
    A_ub, A_eq = _Rows(), _Rows()
    s = a.sign
    for ti, t in enumerate(times):
        d = a.d[t]
        for j in range(nd):
            u, P, Q = ix("u", ti, j), ix("P", ti, j), ix("Q", ti, j)
            c[u] += d * a.c_on[j]
            csign = 1.0 if a.is_pr[j] else -1.0
            for k in range(M):
                b = ix("blk", ti, j, k)
                ub[b] = a.blk_size[t, j, k]
                c[b] = csign * d * a.blk_price[t, j, k]
            c[ix("exc", ti, j)] = csign * d * a.blk_price[t, j, -1]
            A_eq.add([P] + [ix("blk", ti, j, k) for k in range(M)] + [ix("exc", ti, j)],
                     [1.0] + [-1.0] * (M + 1), 0.0)
            A_ub.add([u, P], [a.p_min[t, j], -1.0], 0.0)
            A_ub.add([P, u], [1.0, -a.p_max[t, j]], 0.0)
            A_ub.add([u, Q], [a.q_min[t, j], -1.0], 0.0)
            A_ub.add([Q, u], [1.0, -a.q_max[t, j]], 0.0)
            for k in range(10):
                r = ix("r", ti, j, k)
                ub[r] = a.r_max[j, k]
                c[r] = d * a.r_cost[j, k]
            R = lambda p: ix("r", ti, j, _R[p])  # noqa: E731
            A_ub.add([P] + [R(p) for p in _UP] + [u], [s[j], 1, 1, 1, -m.A_up[t, j]], 0.0)
            A_ub.add([P] + [R(p) for p in _DN] + [u], [-s[j], 1, 1, -m.A_dn[t, j]], 0.0)
            A_ub.add([Q, R("qru"), u], [s[j], 1, -m.B_up[t, j]], 0.0)
            A_ub.add([Q, R("qrd"), u], [-s[j], 1, -m.B_dn[t, j]], 0.0)
            A_ub.add([R("nsc"), R("rru_off"), u], [1, 1, a.p_max[t, j]], a.p_max[t, j])
            A_ub.add([R("rrd_off"), u], [1, a.p_max[t, j]], a.p_max[t, j])
            if couple:
                su, sd = ix("su", ti, j), ix("sd", ti, j)
                c[su], c[sd] = a.c_su[j], a.c_sd[j]
                if ti == 0:
                    P0 = a.u0[j] * a.p0[j]
                    A_ub.add([u, su], [1, -1], a.u0[j])
                    A_ub.add([u, sd], [-1, -1], -a.u0[j])
                    A_ub.add([P, su], [1, -a.ramp_su[j]], a.ramp_up[j] + P0)
                    A_ub.add([P, sd], [-1, -a.ramp_sd[j]], a.ramp_down[j] - P0)
                    ub[su] = 1.0 - a.u0[j]
                    ub[sd] = a.u0[j]
                else:
                    up, Pp = ix("u", ti - 1, j), ix("P", ti - 1, j)
                    A_ub.add([u, up, su], [1, -1, -1], 0.0)
                    A_ub.add([up, u, sd], [1, -1, -1], 0.0)
                    A_ub.add([P, Pp, su], [1, -1, -a.ramp_su[j]], a.ramp_up[j])
                    A_ub.add([Pp, P, sd], [1, -1, -a.ramp_sd[j]], a.ramp_down[j])
                    A_ub.add([su, up], [1, 1], 1.0)
                    A_ub.add([sd, up], [1, -1], 0.0)
                # start-up and shut-down indicators cannot exceed what the binaries allow
                A_ub.add([su, u], [1, -1], 0.0)
                A_ub.add([sd, u], [1, 1], 1.0)
            else:
                ub[ix("su", ti, j)] = ub[ix("sd", ti, j)] = 0.0
        for z in range(nz):
            members = np.nonzero(a.zone_member[z])[0]
            for k, prod in enumerate(ZONE_PRODUCTS):
                zs = ix("zs", ti, z, k)
                pen = m.zone_pen[z, k]
                req = m.zone_req[t, z, k]
                if pen == 0.0 and req == 0.0:
                    ub[zs] = 0.0
                    continue
                c[zs] = d * pen
                cols = [ix("r", ti, j, _R[p]) for j in members for p in ZONE_PROVIDERS[prod]]
                A_ub.add(cols + [zs], [-1.0] * (len(cols) + 1), -req)
        A_eq.add([ix("P", ti, j) for j in range(nd)] + [ix("loss", ti), ix("ep", ti), ix("em", ti)],
                 list(s) + [-1.0, -1.0, 1.0], 0.0)
        c[ix("ep", ti)] = c[ix("em", ti)] = d * a.c_p
    Aub, bub = A_ub.matrix(n)
    Aeq, beq = A_eq.matrix(n)
    res = solve_lp(LpProblem(c, Aub, bub, Aeq, beq, lb, ub))

    def unpack(name, shape):
        return res.x[off[name]: off[name] + int(np.prod(shape))].reshape(shape)

    return res, unpack


def economic_dispatch(case: Case, split_by_time: bool = False,
                      workers: int = 1) -> DispatchResult:
    """Copper-plate economic dispatch: the seed state and the bound ``z_ed``.

    With ``split_by_time`` the periods are solved independently (ramping
    and start-up coupling dropped, so the sum is still an upper bound) and a
    forward ramp pass reconciles the seed; this variant is a heuristic.
    """
    a = case.arrays
    T, nd = a.T, a.nd
    if not split_by_time:
        res, unpack = _dispatch_lp(case, list(range(T)), True)
        if res.status != "optimal":
            raise ProjectionError(f"economic dispatch LP {res.status}: {res.message}")
        z_ed = -res.objective
        u, P, Q = unpack("u", (T, nd)), unpack("P", (T, nd)), unpack("Q", (T, nd))
        r = unpack("r", (T, nd, 10))
    else:
        with WorkerPool(workers) as pool:
            parts = pool.map(lambda t: _dispatch_lp(case, [t], False), list(range(T)))
        u, P, Q = np.zeros((T, nd)), np.zeros((T, nd)), np.zeros((T, nd))
        r = np.zeros((T, nd, 10))
        z_ed = 0.0
        for t, (res, unpack) in enumerate(parts):
            if res.status != "optimal":
                raise ProjectionError(f"economic dispatch LP at t={t} {res.status}")
            z_ed -= res.objective
            u[t], P[t], Q[t] = unpack("u", (1, nd))[0], unpack("P", (1, nd))[0], unpack("Q", (1, nd))[0]
            r[t] = unpack("r", (1, nd, 10))[0]
        # consensus pass: pull each period into the ramp window of the previous one
        Pprev, uprev = a.u0 * a.p0, a.u0
        for t in range(T):
            su = np.maximum(u[t] - uprev, 0.0)
            sd = np.maximum(uprev - u[t], 0.0)
            P[t] = np.clip(P[t], Pprev - a.ramp_down - sd * a.ramp_sd, Pprev + a.ramp_up + su * a.ramp_su)
            P[t] = np.clip(P[t], u[t] * a.p_min[t], u[t] * a.p_max[t])
            Pprev, uprev = P[t], u[t]
    st = init_state(case)
    st["u_on"][:] = np.clip(u, 0.0, 1.0)
    on = u > 1e-9
    st["p_on"][:] = np.where(on, P / np.where(on, u, 1.0), a.p_min)
    st["q"][:] = np.where(on, Q / np.where(on, u, 1.0), np.clip(0.0, a.q_min, a.q_max))
    for k, p in enumerate(RESERVE_PRODUCTS):
        st[p][:] = r[:, :, k]
    st.clip()
    return DispatchResult(st, float(z_ed), "optimal", split_by_time, u, P)


# ----------------------------------------------------------------------------
# AC Jacobians

def network_withdrawals(v, theta, phi, tau, ush, a):
    """Bus withdrawals by branches and shunts and branch |S| at both ends."""
    dl = theta[a.br_fr] - theta[a.br_to] - phi
    pf, qf, pt, qt = branch_flows(v[a.br_fr], v[a.br_to], dl, tau, a.g, a.b, a.bch)
    wp = np.zeros(a.nb)
    wq = np.zeros(a.nb)
    np.add.at(wp, a.br_fr, pf)
    np.add.at(wp, a.br_to, pt)
    np.add.at(wq, a.br_fr, qf)
    np.add.at(wq, a.br_to, qt)
    vb = v[a.sh_bus]
    np.add.at(wp, a.sh_bus, a.sh_g * ush * vb * vb)
    np.add.at(wq, a.sh_bus, -a.sh_b * ush * vb * vb)
    s = np.concatenate([np.hypot(pf, qf), np.hypot(pt, qt)])
    return wp, wq, s


def build_ac_jacobians(state: FlatState, t: int, s_guard: float = 1e-6):
    """Partials of network withdrawals and branch |S| wrt (v, theta) at ``t``.

    Returns ``(J_pv, J_pth, J_qv, J_qth, J_sv, J_sth)`` as CSR matrices;
    the |S| rows list from-ends first, then to-ends.
    """
    a = state.case.arrays
    v, th = state["v"][t], state["theta"][t]
    phi, tau, ush = state["phi"][t], state["tau"][t], state["u_sh"][t]
    fr, to = a.br_fr, a.br_to
    nb, nbr = a.nb, a.nbr
    dl = th[fr] - th[to] - phi
    pf, qf, pt, qt = branch_flows(v[fr], v[to], dl, tau, a.g, a.b, a.bch)
    dpf, dqf, dpt, dqt = branch_flow_partials(v[fr], v[to], dl, tau, a.g, a.b, a.bch)
    rows = np.arange(nbr)

    def branch_jac(dx):
        """(nbr, nb) partials of one flow quantity wrt v and theta."""
        Jv = np.zeros((nbr, nb))
        Jt = np.zeros((nbr, nb))
        np.add.at(Jv, (rows, fr), dx[0])
        np.add.at(Jv, (rows, to), dx[1])
        np.add.at(Jt, (rows, fr), dx[2])
        np.add.at(Jt, (rows, to), -dx[2])
        return Jv, Jt

    J = {k: branch_jac(dx) for k, dx in (("pf", dpf), ("qf", dqf), ("pt", dpt), ("qt", dqt))}
    Afr = np.zeros((nb, nbr))
    Afr[fr, rows] = 1.0
    Ato = np.zeros((nb, nbr))
    Ato[to, rows] = 1.0
    J_pv = Afr @ J["pf"][0] + Ato @ J["pt"][0]
    J_pth = Afr @ J["pf"][1] + Ato @ J["pt"][1]
    J_qv = Afr @ J["qf"][0] + Ato @ J["qt"][0]
    J_qth = Afr @ J["qf"][1] + Ato @ J["qt"][1]
    vb = v[a.sh_bus]
    np.add.at(J_pv, (a.sh_bus, a.sh_bus), 2.0 * a.sh_g * ush * vb)
    np.add.at(J_qv, (a.sh_bus, a.sh_bus), -2.0 * a.sh_b * ush * vb)
    sf = np.maximum(np.hypot(pf, qf), s_guard)
    st = np.maximum(np.hypot(pt, qt), s_guard)
    J_sv = np.vstack([(pf[:, None] * J["pf"][0] + qf[:, None] * J["qf"][0]) / sf[:, None],
                      (pt[:, None] * J["pt"][0] + qt[:, None] * J["qt"][0]) / st[:, None]])
    J_sth = np.vstack([(pf[:, None] * J["pf"][1] + qf[:, None] * J["qf"][1]) / sf[:, None],
                       (pt[:, None] * J["pt"][1] + qt[:, None] * J["qt"][1]) / st[:, None]])
    return tuple(sp.csr_matrix(M) for M in (J_pv, J_pth, J_qv, J_qth, J_sv, J_sth))


# ----------------------------------------------------------------------------
# Projections 3 and 5: power-flow QP at one period

def _pf_qp(state: FlatState, t: int, config: ProjectionConfig, alpha: float,
           p_lo: np.ndarray | None = None, p_hi: np.ndarray | None = None, elastic: bool = False):
    """Build and solve the linearized power-flow QP at period ``t``.

    ``p_lo``/``p_hi`` optionally tighten the device ``p_on`` bounds (the
    ramp windows of Projection 5).  Returns the QP result and an unpack
    function mapping the solution to (v, theta, p_on, q, p_dc, qfr, qto).
    ``elastic`` turns the balance rows into penalized soft rows.
    """
    a = state.case.arrays
    nb, nd, ndc = a.nb, a.nd, a.ndc
    v0, th0 = state["v"][t].copy(), state["theta"][t].copy()
    phi, tau, ush = state["phi"][t], state["tau"][t], state["u_sh"][t]
    u = state["u_on"][t]
    p0, q0 = state["p_on"][t].copy(), state["q"][t].copy()
    pdc0, qf0, qt0 = state["p_dc"][t].copy(), state["qfr_dc"][t].copy(), state["qto_dc"][t].copy()
    J_pv, J_pth, J_qv, J_qth, J_sv, J_sth = (J.toarray() for J in
                                             build_ac_jacobians(state, t, config.s_guard))
    wp, wq, s0 = network_withdrawals(v0, th0, phi, tau, ush, a)
    iv, ith = 0, nb
    ip, iq = 2 * nb, 2 * nb + nd
    idc, iqf, iqt = 2 * nb + 2 * nd, 2 * nb + 2 * nd + ndc, 2 * nb + 2 * nd + 2 * ndc
    n = 2 * nb + 2 * nd + 3 * ndc
    x0 = np.concatenate([v0, th0, p0, q0, pdc0, qf0, qt0])

    lb = np.empty(n)
    ub = np.empty(n)
    lb[iv:ith], ub[iv:ith] = a.v_min, a.v_max
    lb[ith:ip], ub[ith:ip] = -np.pi, np.pi
    lb[ith + a.ref] = ub[ith + a.ref] = th0[a.ref]
    plo, phi_, qlo, qhi = _reserve_limits(state, t)
    if p_lo is not None:
        plo, phi_ = np.maximum(plo, p_lo), np.minimum(phi_, p_hi)
        # keep the window nonempty around the (ramp-feasible) current value
        plo, phi_ = np.minimum(plo, np.maximum(p0, p_lo)), np.maximum(phi_, np.minimum(p0, p_hi))
    lb[ip:iq], ub[ip:iq] = plo, phi_
    lb[iq:idc], ub[iq:idc] = qlo, qhi
    off = u <= 0.0
    lb[ip:iq][off] = ub[ip:iq][off] = p0[off]
    lb[iq:idc][off] = ub[iq:idc][off] = q0[off]
    lb[idc:iqf], ub[idc:iqf] = -a.dc_pmax, a.dc_pmax
    lb[iqf:iqt], ub[iqf:iqt] = a.dc_qfr[:, 0], a.dc_qfr[:, 1]
    lb[iqt:], ub[iqt:] = a.dc_qto[:, 0], a.dc_qto[:, 1]

    # linearized balance: device injection - dc - withdrawals(lin) = 0
    Dev = np.zeros((nb, nd))
    Dev[a.dev_bus, np.arange(nd)] = a.sign * u
    Dfr = np.zeros((nb, ndc))
    Dfr[a.dc_fr, np.arange(ndc)] = 1.0
    Dto = np.zeros((nb, ndc))
    Dto[a.dc_to, np.arange(ndc)] = 1.0
    Zd = np.zeros((nb, nd))
    Ep = np.hstack([-J_pv, -J_pth, Dev, Zd, Dto - Dfr, np.zeros((nb, 2 * ndc))])
    fp = wp - J_pv @ v0 - J_pth @ th0
    Eq = np.hstack([-J_qv, -J_qth, Zd, Dev, np.zeros((nb, ndc)), -Dfr, -Dto])
    fq = wq - J_qv @ v0 - J_qth @ th0
    # flow limits and angle-difference limits
    Js = np.hstack([J_sv, J_sth, np.zeros((2 * a.nbr, n - 2 * nb))])
    smax = np.concatenate([a.s_max, a.s_max])
    gs = alpha * smax - s0 + Js[:, :2 * nb] @ np.concatenate([v0, th0])
    Ang = np.zeros((a.nbr, n))
    Ang[np.arange(a.nbr), ith + a.br_fr] = 1.0
    Ang[np.arange(a.nbr), ith + a.br_to] -= 1.0
    lim = config.angle_limit
    G = np.vstack([Js, Ang, -Ang])
    h = np.concatenate([gs, lim + phi, lim - phi])

    g1, g2, g3, g4, g5, _ = config.gamma
    wdiag = np.concatenate([np.full(nb, g3), np.full(nb, g4), np.full(nd, g1), np.full(nd, g2),
                            np.full(3 * ndc, config.dc_reg)])
    Qm = np.diag(2.0 * wdiag)
    c = -2.0 * wdiag * x0
    if g5 > 0:
        d = a.d[t]
        sl = slice(t, t + 1)
        _, marg, _ = energy_cost((u * p0)[None], a.blk_cum[sl], a.blk_size[sl], a.blk_price[sl], d)
        pmax_price = max(float(np.abs(a.blk_price).max(initial=0.0)), 1e-12)
        csign = np.where(a.is_pr, 1.0, -1.0)
        c[ip:iq] += g5 * csign * marg[0] * u / (d * pmax_price)
    E = np.vstack([Ep, Eq])
    f = np.concatenate([fp, fq])
    if elastic:
        # balance slacks s+ - s- with a large linear price keep the QP feasible
        ne = E.shape[0]
        E = np.hstack([E, -np.eye(ne), np.eye(ne)])
        G = np.hstack([G, np.zeros((G.shape[0], 2 * ne))])
        Qm = np.pad(Qm, ((0, 2 * ne), (0, 2 * ne)))
        Qm[n:, n:] = np.diag(np.full(2 * ne, 2.0 * config.dc_reg))
        c = np.concatenate([c, np.full(2 * ne, config.elastic_price)])
        lb = np.concatenate([lb, np.zeros(2 * ne)])
        ub = np.concatenate([ub, np.full(2 * ne, np.inf)])
    res = solve_qp(QpProblem(Qm, c, G, h, E, f, lb, ub))

    def unpack(x):
        return (x[iv:ith], x[ith:ip], x[ip:iq], x[iq:idc], x[idc:iqf], x[iqf:iqt], x[iqt:n])

    return res, unpack


def _reserve_limits(state: FlatState, t: int):
    """Bounds on p_on and q at ``t`` that leave room for the reserves held.

    Devices whose reserves already exceed their headroom keep the plain
    bounds widened to the current value; reserve cleanup trims them later.
    """
    a = state.case.arrays
    u = state["u_on"][t]
    r = {p: state[p][t] for p in RESERVE_PRODUCTS}
    up = r["rgu"] + r["scr"] + r["rru_on"]
    dn = r["rgd"] + r["rrd_on"]
    inv = np.where(u > 0, 1.0 / np.where(u > 0, u, 1.0), 0.0)
    pr = a.is_pr
    # producers: p + up/u <= p_max and p - dn/u >= p_min; consumers mirror
    plo = a.p_min[t] + np.where(pr, dn, up) * inv
    phi = a.p_max[t] - np.where(pr, up, dn) * inv
    qlo = a.q_min[t] + np.where(pr, r["qrd"], r["qru"]) * inv
    qhi = a.q_max[t] - np.where(pr, r["qru"], r["qrd"]) * inv
    p0, q0 = state["p_on"][t], state["q"][t]
    bad_p = plo > phi
    plo = np.where(bad_p, a.p_min[t], np.minimum(plo, p0))
    phi = np.where(bad_p, a.p_max[t], np.maximum(phi, p0))
    bad_q = qlo > qhi
    qlo = np.where(bad_q, a.q_min[t], np.minimum(qlo, q0))
    qhi = np.where(bad_q, a.q_max[t], np.maximum(qhi, q0))
    return (np.clip(plo, a.p_min[t], a.p_max[t]), np.clip(phi, a.p_min[t], a.p_max[t]),
            np.clip(qlo, a.q_min[t], a.q_max[t]), np.clip(qhi, a.q_min[t], a.q_max[t]))


def _write_period(state: FlatState, t: int, parts, p_lo=None, p_hi=None):
    a = state.case.arrays
    v, th, p, q, pdc, qf, qt = parts
    state["v"][t] = np.clip(v, a.v_min, a.v_max)
    state["theta"][t] = th
    p = np.clip(p, a.p_min[t], a.p_max[t])
    if p_lo is not None:
        p = np.clip(p, p_lo, p_hi)
    state["p_on"][t] = p
    state["q"][t] = np.clip(q, a.q_min[t], a.q_max[t])
    state["p_dc"][t] = np.clip(pdc, -a.dc_pmax, a.dc_pmax)
    state["qfr_dc"][t] = np.clip(qf, a.dc_qfr[:, 0], a.dc_qfr[:, 1])
    state["qto_dc"][t] = np.clip(qt, a.dc_qto[:, 0], a.dc_qto[:, 1])


def _pf_resolves(state: FlatState, t: int, config: ProjectionConfig, p_lo=None, p_hi=None) -> str:
    """Re-solve the linearized QP at the new point for each flow multiplier."""
    status = "unchanged"
    for alpha in config.alpha_sequence():
        res, unpack = _pf_qp(state, t, config, alpha, p_lo, p_hi)
        if res.status != "optimal":
            res, unpack = _pf_qp(state, t, config, alpha * config.relax_factor, p_lo, p_hi)
        if res.status != "optimal" and config.elastic_price > 0:
            res, unpack = _pf_qp(state, t, config, alpha * config.relax_factor, p_lo, p_hi, True)
        if res.status != "optimal":
            log.warning("power-flow QP at t=%d is %s; period left unchanged", t, res.status)
            return status
        _write_period(state, t, unpack(res.x), p_lo, p_hi)
        status = "solved"
    return status


def linearized_power_flow(state: FlatState, t: int, config: ProjectionConfig | None = None) -> str:
    """Regularized power-balance projection at ``t`` (updates ``state`` in place)."""
    return _pf_resolves(state, t, config or ProjectionConfig())


def linearized_power_flow_all(state: FlatState, config: ProjectionConfig | None = None,
                              workers: int = 1) -> list[str]:
    config = config or ProjectionConfig()
    with WorkerPool(workers) as pool:
        return pool.map(lambda t: linearized_power_flow(state, t, config), list(range(state.case.T)))


# ----------------------------------------------------------------------------
# Projection 4: reserve cleanup

def reserve_cleanup(state: FlatState, t: int) -> str:
    """Cheapest reserves at ``t`` with u, p and q held fixed (in place)."""
    case = state.case
    a = case.arrays
    m = SurplusModel(case)
    nd, nz, nk = a.nd, a.nz, len(ZONE_PRODUCTS)
    d = a.d[t]
    u, P, Q = state["u_on"][t], state["u_on"][t] * state["p_on"][t], state["u_on"][t] * state["q"][t]
    s = a.sign
    n = nd * 10 + nz * nk
    c = np.zeros(n)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    ub[: nd * 10] = a.r_max.ravel()
    # a tiny cost keeps unrequired, unpriced reserves at zero
    c[: nd * 10] = d * np.maximum(a.r_cost.ravel(), 1e-9)
    rows = _Rows()
    R = lambda j, p: j * 10 + _R[p]  # noqa: E731
    for j in range(nd):
        rows.add([R(j, p) for p in _UP], [1.0] * 3, max(u[j] * m.A_up[t, j] - s[j] * P[j], 0.0))
        rows.add([R(j, p) for p in _DN], [1.0] * 2, max(u[j] * m.A_dn[t, j] + s[j] * P[j], 0.0))
        rows.add([R(j, "qru")], [1.0], max(u[j] * m.B_up[t, j] - s[j] * Q[j], 0.0))
        rows.add([R(j, "qrd")], [1.0], max(u[j] * m.B_dn[t, j] + s[j] * Q[j], 0.0))
        rows.add([R(j, "nsc"), R(j, "rru_off")], [1.0, 1.0], (1.0 - u[j]) * a.p_max[t, j])
        rows.add([R(j, "rrd_off")], [1.0], (1.0 - u[j]) * a.p_max[t, j])
    for z in range(nz):
        members = np.nonzero(a.zone_member[z])[0]
        for k, prod in enumerate(ZONE_PRODUCTS):
            zs = nd * 10 + z * nk + k
            if m.zone_pen[z, k] == 0.0 and m.zone_req[t, z, k] == 0.0:
                ub[zs] = 0.0
                continue
            c[zs] = d * m.zone_pen[z, k]
            cols = [R(j, p) for j in members for p in ZONE_PROVIDERS[prod]]
            rows.add(cols + [zs], [-1.0] * (len(cols) + 1), -m.zone_req[t, z, k])
    A, b = rows.matrix(n)
    res = solve_lp(LpProblem(c, A, b, None, None, lb, ub))
    if res.status != "optimal":
        log.warning("reserve cleanup LP at t=%d is %s", t, res.status)
        return res.status
    r = np.clip(res.x[: nd * 10].reshape(nd, 10), 0.0, a.r_max)
    _clip_headroom(r, u, P, Q, m, a, t)
    for p in RESERVE_PRODUCTS:
        state[p][t] = r[:, _R[p]]
    return res.status


def _clip_headroom(r, u, P, Q, m, a, t):
    """Trim reserves so every linking row holds exactly (guards LP tolerance)."""
    s = a.sign
    groups = (
        (_UP, u * m.A_up[t] - s * P),
        (_DN, u * m.A_dn[t] + s * P),
        (("qru",), u * m.B_up[t] - s * Q),
        (("qrd",), u * m.B_dn[t] + s * Q),
        (("nsc", "rru_off"), (1.0 - u) * a.p_max[t]),
        (("rrd_off",), (1.0 - u) * a.p_max[t]),
    )
    for prods, cap in groups:
        cols = [_R[p] for p in prods]
        excess = r[:, cols].sum(axis=1) - np.maximum(cap, 0.0)
        for k in reversed(cols):
            cut = np.clip(excess, 0.0, r[:, k])
            r[:, k] -= cut
            excess -= cut


def reserve_cleanup_all(state: FlatState, workers: int = 1) -> list[str]:
    with WorkerPool(workers) as pool:
        return pool.map(lambda t: reserve_cleanup(state, t), list(range(state.case.T)))


# ----------------------------------------------------------------------------
# Projection 1: device binaries

def device_problem(state: FlatState, j: int, fixed: np.ndarray | None = None,
                   weights: dict | None = None) -> DeviceProblem:
    """Per-device projection problem with targets from the relaxed state.

    The power targets are the delivered values ``u * p_on`` and ``u * q``
    so that rounding a fractional commitment does not change the injection.
    """
    a = state.case.arrays
    w = weights or ProjectionConfig().device_weights
    return DeviceProblem(
        s=float(a.sign[j]), u0=int(a.u0[j]), p0=float(a.p0[j]),
        min_up=int(a.min_up[j]), min_down=int(a.min_down[j]), init_dwell=int(a.init_dwell[j]),
        p_min=a.p_min[:, j], p_max=a.p_max[:, j], q_min=a.q_min[:, j], q_max=a.q_max[:, j],
        r_max=a.r_max[j], ramp_up=float(a.ramp_up[j]), ramp_down=float(a.ramp_down[j]),
        ramp_su=float(a.ramp_su[j]), ramp_sd=float(a.ramp_sd[j]),
        u_ref=state["u_on"][:, j].copy(), p_ref=state["u_on"][:, j] * state["p_on"][:, j],
        q_ref=state["u_on"][:, j] * state["q"][:, j],
        r_ref=np.stack([state[p][:, j] for p in RESERVE_PRODUCTS], axis=1),
        fixed=fixed, w_u=w["u"], w_p=w["p"], w_q=w["q"], w_r=w["r"])


def project_device(state: FlatState, j: int, fixed: np.ndarray | None = None,
                   weights: dict | None = None, write: bool = True) -> DeviceSolution:
    """Exact binary projection of device ``j``; writes the result into ``state``."""
    sol = solve_device_milp(device_problem(state, j, fixed, weights))
    if sol.u is None:
        raise ProjectionError(f"device {state.case.arrays.device_ids[j]}: no feasible on/off sequence")
    if write:
        state["u_on"][:, j] = sol.u
        state["p_on"][:, j] = sol.p_on
        state["q"][:, j] = sol.q
        for k, p in enumerate(RESERVE_PRODUCTS):
            state[p][:, j] = sol.r[:, k]
    return sol


def project_devices(state: FlatState, fixed: np.ndarray | None = None, weights: dict | None = None,
                    workers: int = 1) -> list[DeviceSolution]:
    """Project every device; ``fixed`` is a (T, nd) array of 0/1/NaN."""
    nd = state.case.arrays.nd

    def one(j):
        return project_device(state, j, None if fixed is None else fixed[:, j], weights)

    with WorkerPool(workers) as pool:
        return pool.map(one, list(range(nd)))


# ----------------------------------------------------------------------------
# Projection 5: ramp-constrained power flow

@dataclass
class FreezeGroups:
    """Two-way device partition; group a is frozen at t = 2, 4, ... (1-based)."""
    group_a: np.ndarray
    group_b: np.ndarray
    nd: int

    def frozen_at(self, t: int) -> np.ndarray:
        """Boolean mask of devices frozen at 0-based period ``t``."""
        mask = np.zeros(self.nd, dtype=bool)
        mask[self.group_a if (t + 1) % 2 == 0 else self.group_b] = True
        return mask


def assign_freeze_groups(case: Case, seed: int = 0) -> FreezeGroups:
    nd = case.arrays.nd
    perm = np.random.default_rng(seed).permutation(nd)
    half = (nd + 1) // 2
    return FreezeGroups(np.sort(perm[:half]), np.sort(perm[half:]), nd)


def ramp_windows(state: FlatState, t: int, frozen: np.ndarray):
    """Bounds on ``p_on`` at ``t`` keeping both adjacent ramp rows satisfied.

    Neighbouring periods are treated as fixed, which holds for unfrozen
    devices because they are frozen at ``t - 1`` and ``t + 1``.  Frozen
    devices get a degenerate window at their current value.
    """
    a = state.case.arrays
    T = a.T
    u = state["u_on"]
    P = u * state["p_on"]
    up = a.u0 if t == 0 else u[t - 1]
    Pp = a.u0 * a.p0 if t == 0 else P[t - 1]
    su, sd = np.maximum(u[t] - up, 0.0), np.maximum(up - u[t], 0.0)
    lo = Pp - a.ramp_down - sd * a.ramp_sd
    hi = Pp + a.ramp_up + su * a.ramp_su
    if t + 1 < T:
        un = u[t + 1]
        su2, sd2 = np.maximum(un - u[t], 0.0), np.maximum(u[t] - un, 0.0)
        lo = np.maximum(lo, P[t + 1] - a.ramp_up - su2 * a.ramp_su)
        hi = np.minimum(hi, P[t + 1] + a.ramp_down + sd2 * a.ramp_sd)
    on = u[t] > 0
    p_lo = np.where(on, lo / np.where(on, u[t], 1.0), -np.inf)
    p_hi = np.where(on, hi / np.where(on, u[t], 1.0), np.inf)
    cur = state["p_on"][t]
    p_lo = np.where(frozen, cur, np.minimum(p_lo, cur))
    p_hi = np.where(frozen, cur, np.maximum(p_hi, cur))
    return p_lo, p_hi


def ramp_constrained_pf(state: FlatState, groups: FreezeGroups, t: int,
                        config: ProjectionConfig | None = None, source: FlatState | None = None) -> str:
    """Power-flow QP at ``t`` with frozen devices pinned and the rest ramp-windowed.

    Windows come from ``source`` (defaults to ``state``) so concurrent
    periods read a consistent snapshot.  If the QP fails the period keeps
    its input values, which are ramp feasible by assumption.
    """
    config = config or ProjectionConfig()
    src = source if source is not None else state
    p_lo, p_hi = ramp_windows(src, t, groups.frozen_at(t))
    work = src.copy() if source is not None else state
    status = _pf_resolves(work, t, config, p_lo, p_hi)
    if work is not state:
        for f in ("v", "theta", "p_on", "q", "p_dc", "qfr_dc", "qto_dc"):
            state[f][t] = work[f][t]
    return status


def ramp_constrained_pf_all(state: FlatState, groups: FreezeGroups,
                            config: ProjectionConfig | None = None, workers: int = 1) -> list[str]:
    """Run every period concurrently against one snapshot of the input."""
    snap = state.copy()
    with WorkerPool(workers) as pool:
        return pool.map(lambda t: ramp_constrained_pf(state, groups, t, config, snap),
                        list(range(state.case.T)))
