"""Independent solution evaluator.

Everything here is recomputed from the case and the solution file with
plain per-element loops, complex branch algebra and dense per-outage
solves, so agreement with the optimizer's vectorised kernels is evidence
rather than tautology.  Totals use ``math.fsum`` so the report does not
depend on element order.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .case import RESERVE_PRODUCTS, ZONE_PRODUCTS, Case
from .state import SolutionError, solution_arrays

HARD_TOL = 1e-8

_TERM_SIGN = {
    "z_value": 1.0, "z_cost": -1.0, "z_on": -1.0, "z_su": -1.0, "z_sd": -1.0,
    "z_reserve": -1.0, "z_zonal": -1.0, "z_p": -1.0, "z_q": -1.0, "z_ac": -1.0,
    "z_xfm": -1.0, "z_ctg_min": -1.0, "z_ctg_avg": -1.0,
}
# which reserve variables count toward each zonal product
_PROVIDERS = {"rgu": ("rgu",), "rgd": ("rgd",), "scr": ("scr",), "nsc": ("nsc",),
              "rru": ("rru_on", "rru_off"), "rrd": ("rrd_on", "rrd_off"),
              "qru": ("qru",), "qrd": ("qrd",)}


@dataclass
class SolutionReport:
    """Score breakdown, hard violations and normalizations of one solution."""
    terms: dict
    violations: list
    z_ed: float | None = None
    flags: list = field(default_factory=list)

    @property
    def z_ms(self) -> float:
        return math.fsum(_TERM_SIGN[k] * v for k, v in self.terms.items())

    @property
    def z_ctg(self) -> float:
        return self.terms["z_ctg_min"] + self.terms["z_ctg_avg"]

    @property
    def z_base(self) -> float:
        """Surplus before contingency penalties."""
        return self.z_ms + self.z_ctg

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def gap(self) -> float | None:
        if self.z_ed is None or self.z_ed == 0:
            return None
        return 100.0 * self.z_ms / self.z_ed

    def signed_terms(self) -> dict:
        """Contributions to ``z_ms``; they sum to it."""
        return {k: _TERM_SIGN[k] * v for k, v in self.terms.items()}

    def shares(self) -> dict:
        """Each cost term as a percentage of |z_base| and of the gross cost."""
        costs = {k: v for k, v in self.terms.items() if k != "z_value"}
        gross = math.fsum(costs.values())
        base = abs(self.z_base)
        return {
            "of_z_base": {k: (100.0 * v / base if base else 0.0) for k, v in costs.items()},
            "of_gross_cost": {k: (100.0 * v / gross if gross else 0.0) for k, v in costs.items()},
        }

    def to_dict(self) -> dict:
        t = self.terms
        return {
            "z_ms": self.z_ms,
            "z_base": self.z_base,
            "z_ed": self.z_ed,
            "gap_percent": self.gap,
            "breakdown": dict(t, z_en=t["z_value"] - t["z_cost"], z_pq=t["z_p"] + t["z_q"]),
            "signed_terms": self.signed_terms(),
            "shares_percent": self.shares(),
            "feasible": self.feasible,
            "violations": self.violations,
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


# ----------------------------------------------------------------------------
# helpers

def _block_cost(P: float, blocks) -> tuple[float, bool]:
    """Cost (or value) of power P over (size, price) blocks; excess at the last price."""
    total, start = 0.0, 0.0
    for size, price in blocks:
        total += price * min(max(P - start, 0.0), size)
        start += size
    excess = max(P - start, 0.0)
    if blocks:
        total += excess * blocks[-1][1]
    return total, excess > 1e-12


def _branch_power(vi, vj, ti, tj, br, phi, tau):
    """Complex power leaving each end of a pi-model branch (tap on the from side)."""
    y = complex(br.g_sr, br.b_sr)
    ych = 0.5j * br.b_ch
    delta = ti - tj - phi
    s_fr = (y.conjugate() - ych) * vi * vi / (tau * tau) \
        - y.conjugate() * vi * vj / tau * cmath.exp(1j * delta)
    s_to = (y.conjugate() - ych) * vj * vj - y.conjugate() * vi * vj / tau * cmath.exp(-1j * delta)
    return s_fr, s_to


def _viol(out, constraint, element, t, magnitude):
    out.append({"constraint": constraint, "element": element, "t": t,
                "magnitude": float(magnitude)})


# ----------------------------------------------------------------------------
# scoring

def _arrays(case: Case, solution: dict):
    try:
        return solution_arrays(case, solution)
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, SolutionError):
            raise
        raise SolutionError(f"malformed solution: {exc}") from None


def score_solution(case: Case, solution: dict, z_ed: float | None = None,
                   violations: bool = True) -> SolutionReport:
    """Exact hard-form score and (optionally) the hard-violation list."""
    X = _arrays(case, solution)
    T = case.T
    dur = case.time_grid.durations
    bus_ix = {b.id: i for i, b in enumerate(case.buses)}
    nb = len(case.buses)
    pen = case.penalties
    acc = {k: [] for k in _TERM_SIGN}
    flags: set[str] = set()
    bad = [f for f, arr in X.items() if not np.all(np.isfinite(arr))]
    if bad:
        raise SolutionError(f"non-finite values in families {bad}")

    dev_ix = {dv.id: j for j, dv in enumerate(case.devices)}
    for t in range(T):
        d = dur[t]
        p_inj = [0.0] * nb
        q_inj = [0.0] * nb
        # devices
        for j, dv in enumerate(case.devices):
            u = X["u_on"][t, j]
            P = u * X["p_on"][t, j]
            Q = u * X["q"][t, j]
            s = 1.0 if dv.is_producer else -1.0
            p_inj[bus_ix[dv.bus]] += s * P
            q_inj[bus_ix[dv.bus]] += s * Q
            cost, excess = _block_cost(P, dv.cost_blocks[t])
            if excess:
                flags.add("p exceeds total block capacity")
            acc["z_cost" if dv.is_producer else "z_value"].append(d * cost)
            acc["z_on"].append(d * dv.on_cost * u)
            uprev = dv.u0 if t == 0 else X["u_on"][t - 1, j]
            acc["z_su"].append(dv.startup_cost * max(u - uprev, 0.0))
            acc["z_sd"].append(dv.shutdown_cost * max(uprev - u, 0.0))
            rcost = dict(dv.reserve_cost)
            for p in RESERVE_PRODUCTS:
                acc["z_reserve"].append(d * rcost.get(p, 0.0) * X[p][t, j])
        # zones
        for z in case.zones:
            req = dict(z.requirements)
            zpen = dict(z.penalties)
            for prod in ZONE_PRODUCTS:
                if (prod in ("qru", "qrd")) == (z.kind == "p"):
                    continue
                need = req.get(prod, (0.0,) * T)[t]
                have = math.fsum(X[p][t, dev_ix[m]] for m in z.devices for p in _PROVIDERS[prod])
                acc["z_zonal"].append(d * zpen.get(prod, 0.0) * max(need - have, 0.0))
        # shunts and dc lines
        for k, sh in enumerate(case.shunts):
            i = bus_ix[sh.bus]
            v = X["v"][t, i]
            p_inj[i] -= sh.g_step * X["u_sh"][t, k] * v * v
            q_inj[i] += sh.b_step * X["u_sh"][t, k] * v * v
        for k, dc in enumerate(case.dc_lines):
            p_inj[bus_ix[dc.fr]] -= X["p_dc"][t, k]
            p_inj[bus_ix[dc.to]] += X["p_dc"][t, k]
            q_inj[bus_ix[dc.fr]] -= X["qfr_dc"][t, k]
            q_inj[bus_ix[dc.to]] -= X["qto_dc"][t, k]
        p_dev = list(p_inj)  # injections before branch flows (contingency input)
        # branches
        qf_all, qt_all = [], []
        for k, br in enumerate(case.branches):
            i, m = bus_ix[br.fr], bus_ix[br.to]
            sf, st = _branch_power(X["v"][t, i], X["v"][t, m], X["theta"][t, i], X["theta"][t, m],
                                   br, X["phi"][t, k], X["tau"][t, k])
            p_inj[i] -= sf.real
            q_inj[i] -= sf.imag
            p_inj[m] -= st.real
            q_inj[m] -= st.imag
            qf_all.append(sf.imag)
            qt_all.append(st.imag)
            over = max(abs(sf), abs(st)) - br.s_max
            key = "z_xfm" if br.is_transformer else "z_ac"
            acc[key].append(d * pen.c_s * max(over, 0.0))
        for i in range(nb):
            acc["z_p"].append(d * pen.c_p * abs(p_inj[i]))
            acc["z_q"].append(d * pen.c_q * abs(q_inj[i]))
        zmin, zavg, islands = _contingencies(case, t, p_dev, X["phi"][t], qf_all, qt_all)
        acc["z_ctg_min"].append(zmin)
        acc["z_ctg_avg"].append(zavg)
        if islands:
            flags.add("contingency islands the network; skipped")
    terms = {k: math.fsum(v) for k, v in acc.items()}
    viol = check_feasibility(case, solution) if violations else []
    return SolutionReport(terms, viol, z_ed, sorted(flags))


def _contingencies(case: Case, t: int, p_dev, phi, qf, qt):
    """Worst and mean post-outage overload penalty at ``t`` by dense solves."""
    if not case.contingencies:
        return 0.0, 0.0, False
    bus_ix = {b.id: i for i, b in enumerate(case.buses)}
    br_ix = {b.id: k for k, b in enumerate(case.branches)}
    ref = next(i for i, b in enumerate(case.buses) if b.ref)
    nb = len(case.buses)
    keep = [i for i in range(nb) if i != ref]
    pos = {i: n for n, i in enumerate(keep)}
    mean = math.fsum(p_dev) / nb
    d = case.time_grid.durations[t]
    c_s = case.penalties.c_s
    scores = []
    islands = False
    for ctg in case.contingencies:
        out = br_ix[ctg.branch]
        B = np.zeros((nb - 1, nb - 1))
        rhs = np.array([p_dev[i] - mean for i in keep])
        for k, br in enumerate(case.branches):
            if k == out:
                continue
            y = 1.0 / br.x
            i, m = bus_ix[br.fr], bus_ix[br.to]
            shift = -y * phi[k]  # flow = y (theta_i - theta_j) + shift
            for a_, sa in ((i, 1.0), (m, -1.0)):
                if a_ in pos:
                    rhs[pos[a_]] -= sa * shift
                    for b_, sb in ((i, 1.0), (m, -1.0)):
                        if b_ in pos:
                            B[pos[a_], pos[b_]] += sa * sb * y
        try:
            if np.linalg.cond(B) > 1e12:
                raise np.linalg.LinAlgError
            th_red = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError:
            islands = True
            continue
        th = np.zeros(nb)
        th[keep] = th_red
        parts = []
        for k, br in enumerate(case.branches):
            if k == out:
                continue
            i, m = bus_ix[br.fr], bus_ix[br.to]
            p = (th[i] - th[m] - phi[k]) / br.x
            s = max(math.hypot(p, qf[k]), math.hypot(p, qt[k]))
            parts.append(d * c_s * max(s - br.s_max_ctg, 0.0))
        scores.append(math.fsum(parts))
    if not scores:
        return 0.0, 0.0, islands
    return max(scores), math.fsum(scores) / len(case.contingencies), islands


# ----------------------------------------------------------------------------
# feasibility

def check_feasibility(case: Case, solution: dict, tol: float = HARD_TOL) -> list[dict]:
    """Every hard violation: integrality, bounds, ramping, min up/down, reserve linking."""
    X = _arrays(case, solution)
    T = case.T
    out: list[dict] = []

    def bound(family, element, t, x, lo, hi):
        if x < lo - tol:
            _viol(out, f"{family}_lower", element, t, lo - x)
        elif x > hi + tol:
            _viol(out, f"{family}_upper", element, t, x - hi)

    for fam, arr in X.items():
        for t, e in zip(*np.nonzero(~np.isfinite(arr))):
            _viol(out, f"{fam}_finite", str(e), int(t), math.inf)
    for t in range(T):
        for i, b in enumerate(case.buses):
            bound("v", b.id, t, X["v"][t, i], b.v_min, b.v_max)
            if b.ref and abs(X["theta"][t, i]) > tol:
                _viol(out, "theta_reference", b.id, t, abs(X["theta"][t, i]))
        for k, br in enumerate(case.branches):
            bound("phi", br.id, t, X["phi"][t, k], br.phi_min, br.phi_max)
            bound("tau", br.id, t, X["tau"][t, k], br.tau_min, br.tau_max)
        for k, dc in enumerate(case.dc_lines):
            bound("p_dc", dc.id, t, X["p_dc"][t, k], -dc.p_max, dc.p_max)
            bound("qfr_dc", dc.id, t, X["qfr_dc"][t, k], dc.qfr_min, dc.qfr_max)
            bound("qto_dc", dc.id, t, X["qto_dc"][t, k], dc.qto_min, dc.qto_max)
        for k, sh in enumerate(case.shunts):
            x = X["u_sh"][t, k]
            if abs(x - round(x)) > tol:
                _viol(out, "u_sh_integral", sh.id, t, abs(x - round(x)))
            bound("u_sh", sh.id, t, x, 0, sh.steps)
    for j, dv in enumerate(case.devices):
        _device_checks(dv, j, X, T, tol, out, bound)
    return out


def _device_checks(dv, j, X, T, tol, out, bound):
    rmax = dict(dv.reserve_max)
    s = 1.0 if dv.is_producer else -1.0
    status, dwell = dv.u0, (10 ** 6 if dv.init_dwell is None else dv.init_dwell)
    for t in range(T):
        u = X["u_on"][t, j]
        if abs(u - round(u)) > tol:
            _viol(out, "u_on_integral", dv.id, t, abs(u - round(u)))
        bound("u_on", dv.id, t, u, 0.0, 1.0)
        p, q = X["p_on"][t, j], X["q"][t, j]
        bound("p_on", dv.id, t, p, dv.p_min[t], dv.p_max[t])
        bound("q", dv.id, t, q, dv.q_min[t], dv.q_max[t])
        r = {prod: X[prod][t, j] for prod in RESERVE_PRODUCTS}
        for prod in RESERVE_PRODUCTS:
            bound(prod, dv.id, t, r[prod], 0.0, rmax.get(prod, 0.0))
        P, Q = u * p, u * q
        if dv.is_producer:
            a_up, a_dn, b_up, b_dn = dv.p_max[t], -dv.p_min[t], dv.q_max[t], -dv.q_min[t]
        else:
            a_up, a_dn, b_up, b_dn = -dv.p_min[t], dv.p_max[t], -dv.q_min[t], dv.q_max[t]
        rows = {
            "reserve_p_up": s * P + r["rgu"] + r["scr"] + r["rru_on"] - u * a_up,
            "reserve_p_down": -s * P + r["rgd"] + r["rrd_on"] - u * a_dn,
            "reserve_q_up": s * Q + r["qru"] - u * b_up,
            "reserve_q_down": -s * Q + r["qrd"] - u * b_dn,
            "reserve_offline_up": r["nsc"] + r["rru_off"] - (1.0 - u) * dv.p_max[t],
            "reserve_offline_down": r["rrd_off"] - (1.0 - u) * dv.p_max[t],
        }
        uprev = dv.u0 if t == 0 else X["u_on"][t - 1, j]
        Pprev = dv.u0 * dv.p0 if t == 0 else X["u_on"][t - 1, j] * X["p_on"][t - 1, j]
        su, sd = max(u - uprev, 0.0), max(uprev - u, 0.0)
        rows["ramp_up"] = P - Pprev - dv.ramp_up - su * dv.ramp_startup
        rows["ramp_down"] = Pprev - P - dv.ramp_down - sd * dv.ramp_shutdown
        for name, val in rows.items():
            if val > tol:
                _viol(out, name, dv.id, t, val)
        ub = int(round(u))
        if ub != status:
            need = dv.min_up if status == 1 else dv.min_down
            if dwell < need:
                _viol(out, "min_uptime" if status == 1 else "min_downtime", dv.id, t, need - dwell)
            status, dwell = ub, 1
        else:
            dwell += 1
