"""Market-surplus objective and its hand-written gradient.

The optimizer minimises ``loss = -z_ms`` where ``z_ms`` is consumer value
minus every cost and penalty.  Evaluation runs over contiguous blocks of
time periods; the terms that couple neighbouring periods (start-up,
shut-down, ramp rows) are handled in a second pass over device blocks.
Every partial result is written to a disjoint slice and summed in a fixed
order, so results do not depend on the worker count.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .case import RESERVE_PRODUCTS, ZONE_PRODUCTS, ZONE_PROVIDERS, Case
from .parallel import WorkerPool
from .state import FlatState, Layout

_R = {p: k for k, p in enumerate(RESERVE_PRODUCTS)}
UP_PRODUCTS = ("rgu", "scr", "rru_on")
DOWN_PRODUCTS = ("rgd", "rrd_on")


@dataclass(frozen=True)
class PenaltyShape:
    """Softening ``eps``, magnitude scale ``beta`` and row weight ``rho``.

    ``eps == 0`` selects the exact (hard) forms used for scoring.  ``beta``
    lives in [0.1, 1].
    """
    eps: float = 0.0
    beta: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        if self.eps < 0 or not 0.1 <= self.beta <= 1.0 or self.rho <= 0:
            raise ValueError(f"invalid penalty shape {self}")


HARD = PenaltyShape(0.0, 1.0, 1.0)


def soft_abs(x, eps):
    """sqrt(x^2 + eps^2) and its derivative (0 at the hard-form kink)."""
    r = np.sqrt(x * x + eps * eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        dr = np.where(r > 0, x / np.where(r > 0, r, 1.0), 0.0)
    return r, dr


def soft_relu(x, eps):
    """Shifted soft-ReLU sqrt(max(x,0)^2 + eps^2) - eps; zero on the feasible side."""
    xp = np.maximum(x, 0.0)
    r = np.sqrt(xp * xp + eps * eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        dr = np.where(r > 0, xp / np.where(r > 0, r, 1.0), 0.0)
    return r - eps, dr


# ----------------------------------------------------------------------------
# branch model

def branch_flows(vi, vj, dl, tau, g, b, bch):
    """Pi-model flows with the tap on the from side; ``dl = theta_i - theta_j - phi``."""
    c, s = np.cos(dl), np.sin(dl)
    vv = vi * vj / tau
    bb = b + 0.5 * bch
    pf = g * vi * vi / tau ** 2 + (-g * c - b * s) * vv
    qf = -bb * vi * vi / tau ** 2 + (b * c - g * s) * vv
    pt = g * vj * vj + (-g * c + b * s) * vv
    qt = -bb * vj * vj + (b * c + g * s) * vv
    return pf, qf, pt, qt


def branch_flow_partials(vi, vj, dl, tau, g, b, bch):
    """Partials of (pf, qf, pt, qt), each as a tuple (d/dvi, d/dvj, d/ddl, d/dtau)."""
    c, s = np.cos(dl), np.sin(dl)
    vv = vi * vj / tau
    bb = b + 0.5 * bch
    t2 = tau * tau
    kpf, kqf = -g * c - b * s, b * c - g * s
    kpt, kqt = -g * c + b * s, b * c + g * s
    dpf = (2 * g * vi / t2 + kpf * vj / tau, kpf * vi / tau, (g * s - b * c) * vv,
           -2 * g * vi * vi / (t2 * tau) - kpf * vv / tau)
    dqf = (-2 * bb * vi / t2 + kqf * vj / tau, kqf * vi / tau, (-b * s - g * c) * vv,
           2 * bb * vi * vi / (t2 * tau) - kqf * vv / tau)
    dpt = (kpt * vj / tau, 2 * g * vj + kpt * vi / tau, (g * s + b * c) * vv, -kpt * vv / tau)
    dqt = (kqt * vj / tau, -2 * bb * vj + kqt * vi / tau, (-b * s + g * c) * vv, -kqt * vv / tau)
    return dpf, dqf, dpt, dqt


def energy_cost(P, start, size, price, d):
    """Piecewise-linear block cost of power ``P``.

    ``start``, ``size`` and ``price`` have a trailing block axis.  Power above
    the total block size is priced at the last block's price.  Returns
    (cost, left derivative, excess flag).
    """
    P = np.asarray(P, dtype=np.result_type(P, float))
    fill = np.clip(P[..., None] - start, 0.0, size)
    total = size.sum(axis=-1)
    excess = np.maximum(P - total, 0.0)
    cost = d * ((price * fill).sum(axis=-1) + excess * price[..., -1])
    end = start + size
    idx = np.minimum((end < P[..., None]).sum(axis=-1), price.shape[-1] - 1)
    marg = np.take_along_axis(price, idx[..., None], axis=-1)[..., 0]
    return cost, d * marg, bool(np.any(excess > 1e-12))


def startup_shutdown(u, u0, c_su=0.0, c_sd=0.0):
    """Start-up/shut-down indicators, their cost and the cost gradient wrt ``u``.

    ``u`` is ``(T, n)`` (or ``(T,)``) and ``u0`` the pre-horizon status.
    """
    u = np.asarray(u, dtype=float)
    squeeze = u.ndim == 1
    if squeeze:
        u = u[:, None]
    prev = np.vstack([np.atleast_1d(np.asarray(u0, dtype=float))[None, :], u[:-1]])
    diff = u - prev
    su, sd = np.maximum(diff, 0.0), np.maximum(-diff, 0.0)
    c_su = np.broadcast_to(np.asarray(c_su, dtype=float), u.shape[1:])
    c_sd = np.broadcast_to(np.asarray(c_sd, dtype=float), u.shape[1:])
    z = float((su * c_su).sum() + (sd * c_sd).sum())
    gs = np.where(diff > 0, c_su, 0.0) - np.where(diff < 0, c_sd, 0.0)
    g = gs.copy()
    g[:-1] -= gs[1:]
    if squeeze:
        return su[:, 0], sd[:, 0], z, g[:, 0]
    return su, sd, z, g


def line_overload_penalty(pf, qf, pt, qt, s_max, d, c_s, shape: PenaltyShape = HARD):
    """Apparent-power overload penalty on the worse side of each branch.

    Returns (per-branch penalty, (d/dpf, d/dqf, d/dpt, d/dqt)).
    """
    sf = np.sqrt(pf * pf + qf * qf)
    st = np.sqrt(pt * pt + qt * qt)
    use_fr = sf >= st
    s = np.where(use_fr, sf, st)
    val, dval = soft_relu(s - s_max, shape.eps)
    k = d * c_s * shape.beta
    z = k * val
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(s > 0, k * dval / np.where(s > 0, s, 1.0), 0.0)
    gpf = np.where(use_fr, w * pf, 0.0)
    gqf = np.where(use_fr, w * qf, 0.0)
    gpt = np.where(use_fr, 0.0, w * pt)
    gqt = np.where(use_fr, 0.0, w * qt)
    return z, (gpf, gqf, gpt, gqt)


def power_balance_penalty(p_mis, q_mis, d, c_p, c_q, shape: PenaltyShape = HARD):
    """Soft-abs mismatch penalties; returns (z_p, z_q, dz/dp, dz/dq) per bus."""
    rp, drp = soft_abs(p_mis, shape.eps)
    rq, drq = soft_abs(q_mis, shape.eps)
    kp, kq = d * c_p * shape.beta, d * c_q * shape.beta
    return kp * rp, kq * rq, kp * drp, kq * drq


# ----------------------------------------------------------------------------
# score bookkeeping

@dataclass
class ScoreBreakdown:
    """Objective terms; ``z_ms`` is value minus everything else."""
    z_value: float = 0.0
    z_cost: float = 0.0
    z_on: float = 0.0
    z_su: float = 0.0
    z_sd: float = 0.0
    z_reserve_dev: float = 0.0
    z_zonal: float = 0.0
    z_p: float = 0.0
    z_q: float = 0.0
    z_ac: float = 0.0
    z_xfm: float = 0.0
    z_lin: float = 0.0
    z_ctg_min: float = 0.0
    z_ctg_avg: float = 0.0
    flags: list = field(default_factory=list)

    PENALTIES = ("z_cost", "z_on", "z_su", "z_sd", "z_reserve_dev", "z_zonal", "z_p", "z_q",
                 "z_ac", "z_xfm", "z_lin", "z_ctg_min", "z_ctg_avg")

    @property
    def z_en(self) -> float:
        return self.z_value - self.z_cost

    @property
    def z_ctg(self) -> float:
        return self.z_ctg_min + self.z_ctg_avg

    @property
    def z_reserve(self) -> float:
        return self.z_reserve_dev + self.z_zonal

    @property
    def z_ms(self) -> float:
        return self.z_value - sum(getattr(self, k) for k in self.PENALTIES)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(z_en=self.z_en, z_ctg=self.z_ctg, z_reserve=self.z_reserve, z_ms=self.z_ms)
        return out


_TERMS = ("z_value", "z_cost", "z_on", "z_reserve_dev", "z_zonal", "z_p", "z_q", "z_ac",
          "z_xfm", "z_lin", "z_ctg_min", "z_ctg_avg")


# ----------------------------------------------------------------------------
# the model

def _inc(rows, cols, vals, shape):
    return sp.csr_matrix((np.asarray(vals, dtype=float), (rows, cols)), shape=shape)


def _scatter(M, X):
    """Row-wise ``X @ M.T`` with a fixed summation order."""
    if X.shape[1] == 0 or M.shape[0] == 0:
        return np.zeros((X.shape[0], M.shape[0]), dtype=X.dtype)
    return np.asarray(M @ X.T).T


class SurplusModel:
    """Evaluates the surrogate objective and its gradient for one case."""

    def __init__(self, case: Case, workers: int = 1):
        self.case = case
        self.layout = Layout(case)
        self.pool = WorkerPool(workers)
        a = case.arrays
        self.a = a
        nb = a.nb
        self.A_fr = _inc(a.br_fr, np.arange(a.nbr), np.ones(a.nbr), (nb, a.nbr))
        self.A_to = _inc(a.br_to, np.arange(a.nbr), np.ones(a.nbr), (nb, a.nbr))
        self.A_dev = _inc(a.dev_bus, np.arange(a.nd), a.sign, (nb, a.nd))
        self.A_sh = _inc(a.sh_bus, np.arange(a.nsh), np.ones(a.nsh), (nb, a.nsh))
        self.A_dcf = _inc(a.dc_fr, np.arange(a.ndc), np.ones(a.ndc), (nb, a.ndc))
        self.A_dct = _inc(a.dc_to, np.arange(a.ndc), np.ones(a.ndc), (nb, a.ndc))
        zr, zc = np.nonzero(a.zone_member)
        self.Z = _inc(zr, zc, np.ones(len(zr)), (a.nz, a.nd))
        self.ZT = self.Z.T.tocsr()
        # products that a zone of the matching kind actually counts
        kind_ok = np.array([[(p in ("qru", "qrd")) != bool(isp) for p in ZONE_PRODUCTS]
                            for isp in a.zone_is_p], dtype=float).reshape(a.nz, len(ZONE_PRODUCTS))
        self.zone_pen = a.zone_pen * kind_ok
        self.zone_req = a.zone_req * kind_ok[None]
        sgn = a.sign
        # headroom right-hand sides (per unit of u)
        self.A_up = np.where(a.is_pr, a.p_max, -a.p_min)
        self.A_dn = np.where(a.is_pr, -a.p_min, a.p_max)
        self.B_up = np.where(a.is_pr, a.q_max, -a.q_min)
        self.B_dn = np.where(a.is_pr, -a.q_min, a.q_max)
        self.sgn = sgn
        self.cost_sign = np.where(a.is_pr, 1.0, -1.0)  # loss sign of the block curve
        self.ctg_count = len(a.ctg_ids)

    def close(self):
        self.pool.close()

    # -- public API ----------------------------------------------------------
    def evaluate(self, x, shape: PenaltyShape = HARD, grad: bool = True, ctg=None,
                 iteration: int = 0, terms=None):
        """Return (ScoreBreakdown, gradient of ``-z_ms`` or None).

        ``x`` is a flat vector or a :class:`FlatState`.  ``ctg`` is an
        optional contingency engine contributing the ``z_ctg`` terms.
        ``terms`` restricts evaluation to a subset of breakdown names
        (``z_ctg`` selects both contingency rows); None means all.
        """
        if isinstance(x, FlatState):
            x = x.x
        w = {k: 1.0 if terms is None or k in terms else 0.0
             for k in ScoreBreakdown.PENALTIES + ("z_value", "z_ctg")}
        if terms is not None and "z_ctg" not in terms:
            ctg = None
        T = self.a.T
        g = np.zeros(self.layout.size) if grad else None
        dt = np.result_type(x, float)  # extended precision passes through for checks
        per_t = {k: np.zeros(T, dtype=dt) for k in _TERMS}
        flags: list[str] = []

        def run(t0, t1):
            return self._time_block(t0, t1, x, shape, g, per_t, ctg, iteration, w)

        for f in self.pool.map_blocks(run, T):
            flags.extend(f)
        cross = self._cross_time(x, shape, g, w)
        bd = ScoreBreakdown(flags=sorted(set(flags)))
        for k in _TERMS:
            setattr(bd, k, np.sum(per_t[k]))
        bd.z_su = np.sum(cross["su"])
        bd.z_sd = np.sum(cross["sd"])
        bd.z_lin += np.sum(cross["ramp"])
        return bd, g

    # -- per-time kernel -----------------------------------------------------
    def _time_block(self, t0, t1, x, shape, g, per_t, ctg, iteration, w):
        a, L = self.a, self.layout
        eps, beta, rho = shape.eps, shape.beta, shape.rho

        def get(f):
            return L.view(x, f)[t0:t1]

        v, th, phi, tau = get("v"), get("theta"), get("phi"), get("tau")
        p_dc, qfr_dc, qto_dc = get("p_dc"), get("qfr_dc"), get("qto_dc")
        p_on, q, u, ush = get("p_on"), get("q"), get("u_on"), get("u_sh")
        r = {p: get(p) for p in RESERVE_PRODUCTS}
        d = a.d[t0:t1][:, None]
        fr, to = a.br_fr, a.br_to

        vi, vj = v[:, fr], v[:, to]
        dl = th[:, fr] - th[:, to] - phi
        pf, qf, pt, qt = branch_flows(vi, vj, dl, tau, a.g, a.b, a.bch)
        P, Q = u * p_on, u * q
        vb = v[:, a.sh_bus]
        psh = a.sh_g * ush * vb * vb
        qsh = -a.sh_b * ush * vb * vb
        inj_p = _scatter(self.A_dev, P) - _scatter(self.A_sh, psh) \
            - _scatter(self.A_dcf, p_dc) + _scatter(self.A_dct, p_dc)
        inj_q = _scatter(self.A_dev, Q) - _scatter(self.A_sh, qsh) \
            - _scatter(self.A_dcf, qfr_dc) - _scatter(self.A_dct, qto_dc)
        pm = inj_p - _scatter(self.A_fr, pf) - _scatter(self.A_to, pt)
        qm = inj_q - _scatter(self.A_fr, qf) - _scatter(self.A_to, qt)

        zp, zq, gpm, gqm = power_balance_penalty(pm, qm, d, a.c_p * w["z_p"], a.c_q * w["z_q"], shape)
        per_t["z_p"][t0:t1] = zp.sum(axis=1)
        per_t["z_q"][t0:t1] = zq.sum(axis=1)

        cs = a.c_s * np.where(a.is_xfm, w["z_xfm"], w["z_ac"])
        zs, (opf, oqf, opt, oqt) = line_overload_penalty(pf, qf, pt, qt, a.s_max, d, cs, shape)
        per_t["z_ac"][t0:t1] = np.where(a.is_xfm, 0.0, zs).sum(axis=1)
        per_t["z_xfm"][t0:t1] = np.where(a.is_xfm, zs, 0.0).sum(axis=1)

        sl = slice(t0, t1)
        dw = d * np.where(a.is_pr, w["z_cost"], w["z_value"])
        cost, marg, excess = energy_cost(P, a.blk_cum[sl], a.blk_size[sl], a.blk_price[sl], dw)
        flags = ["p exceeds total block capacity"] if excess else []
        per_t["z_cost"][t0:t1] = np.where(a.is_pr, cost, 0.0).sum(axis=1)
        per_t["z_value"][t0:t1] = np.where(a.is_pr, 0.0, cost).sum(axis=1)
        c_on = a.c_on * w["z_on"]
        r_cost = a.r_cost * w["z_reserve_dev"]
        zone_pen = self.zone_pen * w["z_zonal"]
        rho = rho * w["z_lin"]
        per_t["z_on"][t0:t1] = (d * c_on * u).sum(axis=1)
        rmat = np.stack([r[p] for p in RESERVE_PRODUCTS], axis=-1)  # (Tb, nd, 10)
        per_t["z_reserve_dev"][t0:t1] = (d[..., None] * r_cost * rmat).sum(axis=(1, 2))

        # zonal shortfall
        prov = np.zeros((t1 - t0, a.nz, len(ZONE_PRODUCTS)), dtype=x.dtype)
        for k, zprod in enumerate(ZONE_PRODUCTS):
            tot = sum(r[p] for p in ZONE_PROVIDERS[zprod])
            prov[:, :, k] = _scatter(self.Z, tot)
        zval, zdval = soft_relu(self.zone_req[sl] - prov, eps)
        per_t["z_zonal"][t0:t1] = (d[..., None] * zone_pen * zval).sum(axis=(1, 2))

        # penalized headroom rows
        s = self.sgn
        up = s * P + r["rgu"] + r["scr"] + r["rru_on"] - u * self.A_up[sl]
        dn = -s * P + r["rgd"] + r["rrd_on"] - u * self.A_dn[sl]
        qup = s * Q + r["qru"] - u * self.B_up[sl]
        qdn = -s * Q + r["qrd"] - u * self.B_dn[sl]
        pmax = a.p_max[sl]
        offu = r["nsc"] + r["rru_off"] - (1.0 - u) * pmax
        offd = r["rrd_off"] - (1.0 - u) * pmax
        rows = [soft_relu(z, eps) for z in (up, dn, qup, qdn, offu, offd)]
        per_t["z_lin"][t0:t1] = rho * sum(val for val, _ in rows).sum(axis=1)

        cres = None
        if ctg is not None and ctg.n_ctg > 0:
            cres = ctg.block(t0, t1, inj_p, phi, qf, qt, shape, g is not None, iteration,
                             update=g is not None)
            per_t["z_ctg_min"][t0:t1] = cres.z_min
            per_t["z_ctg_avg"][t0:t1] = cres.z_avg

        if g is None:
            return flags

        # ---- adjoints ----
        gv = L.view(g, "v")[t0:t1]
        gth = L.view(g, "theta")[t0:t1]
        gphi = L.view(g, "phi")[t0:t1]
        gtau = L.view(g, "tau")[t0:t1]
        g_inj_p = gpm if cres is None else gpm + cres.g_pinj
        g_inj_q = gqm
        gpf = -gpm[:, fr] + opf
        gpt = -gpm[:, to] + opt
        gqf = -gqm[:, fr] + oqf
        gqt = -gqm[:, to] + oqt
        if cres is not None:
            gqf = gqf + cres.g_qfr
            gqt = gqt + cres.g_qto
            gphi += cres.g_phi
        dpf, dqf, dpt, dqt = branch_flow_partials(vi, vj, dl, tau, a.g, a.b, a.bch)
        G = [gpf * dpf[k] + gqf * dqf[k] + gpt * dpt[k] + gqt * dqt[k] for k in range(4)]
        gv += _scatter(self.A_fr, G[0]) + _scatter(self.A_to, G[1])
        gth += _scatter(self.A_fr, G[2]) - _scatter(self.A_to, G[2])
        gphi -= G[2]
        gtau += G[3]

        # shunts
        g_psh = -g_inj_p[:, a.sh_bus]
        g_qsh = -g_inj_q[:, a.sh_bus]
        L.view(g, "u_sh")[t0:t1] += (a.sh_g * g_psh - a.sh_b * g_qsh) * vb * vb
        gv += _scatter(self.A_sh, 2.0 * ush * vb * (a.sh_g * g_psh - a.sh_b * g_qsh))

        # dc lines
        L.view(g, "p_dc")[t0:t1] += -g_inj_p[:, a.dc_fr] + g_inj_p[:, a.dc_to]
        L.view(g, "qfr_dc")[t0:t1] += -g_inj_q[:, a.dc_fr]
        L.view(g, "qto_dc")[t0:t1] += -g_inj_q[:, a.dc_to]

        # devices
        gP = s * g_inj_p[:, a.dev_bus] + self.cost_sign * marg
        gQ = s * g_inj_q[:, a.dev_bus]
        gu = d * c_on + np.zeros_like(u)
        gr = {p: d * r_cost[:, _R[p]] for p in RESERVE_PRODUCTS}
        # zonal
        gprov = -d[..., None] * zone_pen * zdval
        for k, zprod in enumerate(ZONE_PRODUCTS):
            back = _scatter(self.ZT, gprov[:, :, k])
            for p in ZONE_PROVIDERS[zprod]:
                gr[p] = gr[p] + back
        # rows
        (_, du), (_, dd), (_, dqu), (_, dqd), (_, dou), (_, dod) = rows
        du, dd, dqu, dqd, dou, dod = (rho * z for z in (du, dd, dqu, dqd, dou, dod))
        gP += s * (du - dd)
        gQ += s * (dqu - dqd)
        gu += -du * self.A_up[sl] - dd * self.A_dn[sl] - dqu * self.B_up[sl] - dqd * self.B_dn[sl] \
            + (dou + dod) * pmax
        for p in UP_PRODUCTS:
            gr[p] = gr[p] + du
        for p in DOWN_PRODUCTS:
            gr[p] = gr[p] + dd
        gr["qru"] = gr["qru"] + dqu
        gr["qrd"] = gr["qrd"] + dqd
        gr["nsc"] = gr["nsc"] + dou
        gr["rru_off"] = gr["rru_off"] + dou
        gr["rrd_off"] = gr["rrd_off"] + dod

        L.view(g, "p_on")[t0:t1] += u * gP
        L.view(g, "q")[t0:t1] += u * gQ
        L.view(g, "u_on")[t0:t1] += gu + p_on * gP + q * gQ
        for p in RESERVE_PRODUCTS:
            L.view(g, p)[t0:t1] += gr[p]
        return flags

    # -- cross-time pass -----------------------------------------------------
    def _cross_time(self, x, shape, g, w):
        a, L = self.a, self.layout
        T, nd = a.T, a.nd
        out = {k: np.zeros((T, nd), dtype=x.dtype) for k in ("su", "sd", "ramp")}
        u_all, p_all = L.view(x, "u_on"), L.view(x, "p_on")
        c_su, c_sd = a.c_su * w["z_su"], a.c_sd * w["z_sd"]
        rho = shape.rho * w["z_lin"]

        def run(j0, j1):
            cols = slice(j0, j1)
            u, p_on = u_all[:, cols], p_all[:, cols]
            P = u * p_on
            P0 = (a.u0 * a.p0)[cols]
            Pprev = np.vstack([P0[None], P[:-1]])
            uprev = np.vstack([a.u0[cols][None], u[:-1]])
            diff = u - uprev
            su, sd = np.maximum(diff, 0.0), np.maximum(-diff, 0.0)
            out["su"][:, cols] = c_su[cols] * su
            out["sd"][:, cols] = c_sd[cols] * sd
            rup = P - Pprev - a.ramp_up[cols] - su * a.ramp_su[cols]
            rdn = Pprev - P - a.ramp_down[cols] - sd * a.ramp_sd[cols]
            vu, dvu = soft_relu(rup, shape.eps)
            vd, dvd = soft_relu(rdn, shape.eps)
            out["ramp"][:, cols] = rho * (vu + vd)
            if g is None:
                return
            dvu, dvd = rho * dvu, rho * dvd
            g_su = c_su[cols] - dvu * a.ramp_su[cols]
            g_sd = c_sd[cols] - dvd * a.ramp_sd[cols]
            gd = np.where(diff > 0, g_su, 0.0) - np.where(diff < 0, g_sd, 0.0)
            gu = gd.copy()
            gu[:-1] -= gd[1:]
            gP = dvu - dvd
            gP[:-1] += dvd[1:] - dvu[1:]
            L.view(g, "p_on")[:, cols] += u * gP
            L.view(g, "u_on")[:, cols] += gu + p_on * gP

        self.pool.map_blocks(run, nd)
        return {k: v.sum(axis=1) for k, v in out.items()}


# ----------------------------------------------------------------------------
# convenience wrappers over a state

def eval_branch_flows(state: FlatState, t: int):
    """(p_fr, q_fr, p_to, q_to) at period ``t``."""
    a = state.case.arrays
    v, th = state["v"][t], state["theta"][t]
    dl = th[a.br_fr] - th[a.br_to] - state["phi"][t]
    return branch_flows(v[a.br_fr], v[a.br_to], dl, state["tau"][t], a.g, a.b, a.bch)


def bus_mismatch(state: FlatState, t: int):
    """Active and reactive bus mismatch (injection minus withdrawal) at ``t``."""
    model = SurplusModel(state.case)
    a = state.case.arrays
    x = state.x
    L = model.layout
    sl = slice(t, t + 1)
    v = L.view(x, "v")[sl]
    pf, qf, pt, qt = (f[None] for f in eval_branch_flows(state, t))
    P = (state["u_on"] * state["p_on"])[sl]
    Q = (state["u_on"] * state["q"])[sl]
    vb = v[:, a.sh_bus]
    ush = state["u_sh"][sl]
    pm = _scatter(model.A_dev, P) - _scatter(model.A_sh, a.sh_g * ush * vb * vb) \
        - _scatter(model.A_dcf, state["p_dc"][sl]) + _scatter(model.A_dct, state["p_dc"][sl]) \
        - _scatter(model.A_fr, pf) - _scatter(model.A_to, pt)
    qm = _scatter(model.A_dev, Q) + _scatter(model.A_sh, a.sh_b * ush * vb * vb) \
        - _scatter(model.A_dcf, state["qfr_dc"][sl]) - _scatter(model.A_dct, state["qto_dc"][sl]) \
        - _scatter(model.A_fr, qf) - _scatter(model.A_to, qt)
    return pm[0], qm[0]


def eval_market_surplus(state: FlatState, shape: PenaltyShape = HARD, ctg=None) -> ScoreBreakdown:
    model = SurplusModel(state.case)
    return model.evaluate(state, shape, grad=False, ctg=ctg)[0]


def backprop_market_surplus(state: FlatState, shape: PenaltyShape = HARD, ctg=None,
                            workers: int = 1) -> np.ndarray:
    """Gradient of ``-z_ms`` (the minimised loss) for every basis entry."""
    model = SurplusModel(state.case, workers)
    try:
        return model.evaluate(state, shape, grad=True, ctg=ctg)[1]
    finally:
        model.close()


def row_values(state: FlatState) -> dict[str, np.ndarray]:
    """Raw penalized-row arguments (feasible when <= 0), each ``(T, n_device)``."""
    a = state.case.arrays
    m = SurplusModel(state.case)
    u, p_on, q = state["u_on"], state["p_on"], state["q"]
    r = {p: state[p] for p in RESERVE_PRODUCTS}
    s = a.sign
    P, Q = u * p_on, u * q
    Pprev = np.vstack([(a.u0 * a.p0)[None], P[:-1]])
    uprev = np.vstack([a.u0[None], u[:-1]])
    su, sd = np.maximum(u - uprev, 0.0), np.maximum(uprev - u, 0.0)
    return {
        "p_up": s * P + r["rgu"] + r["scr"] + r["rru_on"] - u * m.A_up,
        "p_down": -s * P + r["rgd"] + r["rrd_on"] - u * m.A_dn,
        "q_up": s * Q + r["qru"] - u * m.B_up,
        "q_down": -s * Q + r["qrd"] - u * m.B_dn,
        "offline_up": r["nsc"] + r["rru_off"] - (1.0 - u) * a.p_max,
        "offline_down": r["rrd_off"] - (1.0 - u) * a.p_max,
        "ramp_up": P - Pprev - a.ramp_up - su * a.ramp_su,
        "ramp_down": Pprev - P - a.ramp_down - sd * a.ramp_sd,
    }


def penalized_linear(state: FlatState, shape: PenaltyShape):
    """Row penalty ``rho * sum(soft_relu(row))`` and its gradient."""
    bd, g = SurplusModel(state.case).evaluate(state, shape, grad=True, terms={"z_lin"})
    return bd.z_lin, g


def reserve_terms(state: FlatState, shape: PenaltyShape):
    """Device reserve cost, zonal shortfall and the gradient of their sum."""
    bd, g = SurplusModel(state.case).evaluate(
        state, shape, grad=True, terms={"z_reserve_dev", "z_zonal"})
    return bd.z_reserve_dev, bd.z_zonal, g
