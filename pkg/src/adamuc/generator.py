"""Synthetic case generator with a built-in feasible witness.

The witness is constructed first (voltages, angles, taps, shunt steps,
dc transfers) and device outputs are then chosen so that every bus
balances exactly.  Bounds, ramp rates and reserve requirements are drawn
around the witness so that it stays feasible by construction.
"""

from __future__ import annotations

import numpy as np

from .case import (RESERVE_PRODUCTS, Branch, Bus, Case, Contingency, DcLine, Device,
                   Penalties, Shunt, TimeGrid, Zone, ZONE_PROVIDERS, validate_case)
from .surplus import branch_flows


def _union_find_connected(n: int, edges) -> bool:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        parent[find(a)] = find(b)
    return len({find(i) for i in range(n)}) == 1


def outage_keeps_connected(n: int, edges, k: int) -> bool:
    return _union_find_connected(n, [e for j, e in enumerate(edges) if j != k])


def _topology(rng, n):
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    have = {tuple(sorted(e)) for e in edges}
    extra = int(round(0.4 * n)) if n >= 3 else 0
    tries = 0
    while extra > 0 and tries < 50 * n:
        tries += 1
        i, j = (int(z) for z in rng.choice(n, 2, replace=False))
        key = tuple(sorted((i, j)))
        if key in have:
            continue
        have.add(key)
        edges.append((i, j))
        extra -= 1
    return edges


def _smooth(rng, T, base, amp):
    """Slowly varying positive profile."""
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(T)
    return base * (1.0 + amp * np.sin(phase + 0.7 * t))


def generate_synthetic_case(n_bus: int, T: int, seed: int) -> Case:
    """Deterministic random case with ``n_bus`` buses and ``T`` periods."""
    if n_bus < 2 or T < 1:
        raise ValueError("need n_bus >= 2 and T >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(20):
        case = _attempt(rng, n_bus, T)
        if case is not None:
            return case
    raise RuntimeError("generator failed to build a case")  # pragma: no cover


# (buses, periods) of the default benchmark suite; every size runs with each seed
DEFAULT_SUITE = ((5, 2), (10, 4), (14, 4))
SUITE_SEEDS = (0, 1, 2)


def default_suite():
    """Yield ``(name, case)`` for the default synthetic benchmark suite."""
    for n_bus, T in DEFAULT_SUITE:
        for seed in SUITE_SEEDS:
            yield f"{n_bus}bus_T{T}_s{seed}", generate_synthetic_case(n_bus, T, seed)


def _attempt(rng, n, T):
    edges = _topology(rng, n)
    nbr = len(edges)
    bus_ids = [f"bus{i}" for i in range(n)]

    # branch parameters
    x = rng.uniform(0.05, 0.2, nbr)
    r = x * rng.uniform(0.05, 0.15, nbr)
    z2 = r * r + x * x
    g, b = r / z2, -x / z2
    bch = rng.uniform(0.0, 0.04, nbr)
    n_xfm = int(round(0.1 * nbr)) if nbr >= 5 else 0
    is_xfm = np.zeros(nbr, dtype=bool)
    is_xfm[rng.choice(nbr, n_xfm, replace=False)] = True
    tau_lo = np.where(is_xfm, 0.95, 1.0)
    tau_hi = np.where(is_xfm, 1.05, 1.0)
    phi_lo = np.where(is_xfm, -0.1, 0.0)
    phi_hi = np.where(is_xfm, 0.1, 0.0)

    # witness network state
    v_w = rng.uniform(0.97, 1.03, (1, n)) + rng.uniform(-0.005, 0.005, (T, n))
    th_base = rng.normal(0.0, 0.04, n)
    th_w = th_base[None, :] + rng.normal(0.0, 0.004, (T, n))
    th_w[:, 0] = 0.0
    tau_w = np.where(is_xfm, rng.uniform(0.97, 1.03, nbr), 1.0)[None, :].repeat(T, 0)
    phi_w = np.where(is_xfm, rng.uniform(-0.05, 0.05, nbr), 0.0)[None, :].repeat(T, 0)
    fr = np.array([e[0] for e in edges])
    to = np.array([e[1] for e in edges])
    pf, qf, pt, qt = branch_flows(v_w[:, fr], v_w[:, to], th_w[:, fr] - th_w[:, to] - phi_w,
                                  tau_w, g, b, bch)
    sf, st = np.hypot(pf, qf), np.hypot(pt, qt)
    s_w = np.maximum(sf, st).max(axis=0)
    s_max = np.maximum(2.0 * s_w, 1.5)

    # outflows per bus (what the devices must cover)
    out_p = np.zeros((T, n))
    out_q = np.zeros((T, n))
    np.add.at(out_p.T, fr, pf.T)
    np.add.at(out_p.T, to, pt.T)
    np.add.at(out_q.T, fr, qf.T)
    np.add.at(out_q.T, to, qt.T)

    dc_lines, dc_w = [], None
    if n >= 6:
        cand = [(i, j) for i in range(n) for j in range(i + 1, n)
                if (i, j) not in {tuple(sorted(e)) for e in edges}]
        i, j = cand[int(rng.integers(len(cand)))]
        p_dc = rng.uniform(-0.2, 0.2) * np.ones(T) + rng.uniform(-0.02, 0.02, T)
        qfr = rng.uniform(-0.1, 0.1, T)
        qto = rng.uniform(-0.1, 0.1, T)
        dc_lines.append(DcLine("dc0", bus_ids[i], bus_ids[j], 0.5, -0.3, 0.3, -0.3, 0.3))
        dc_w = (p_dc, qfr, qto)
        out_p[:, i] += p_dc
        out_p[:, j] -= p_dc
        out_q[:, i] += qfr
        out_q[:, j] += qto

    shunts, sh_w = [], []
    for k in range(min(2, n - 1)):
        bus = int(rng.integers(n))
        steps = 3
        g_step, b_step = 0.002, rng.uniform(0.02, 0.06)
        u = int(rng.integers(0, steps + 1))
        init = int(rng.integers(0, steps + 1))
        shunts.append(Shunt(f"sh{k}", bus_ids[bus], steps, g_step, b_step, init))
        sh_w.append(u)
        vb2 = v_w[:, bus] ** 2
        out_p[:, bus] += g_step * u * vb2
        out_q[:, bus] += -b_step * u * vb2

    # devices: a consumer and a producer at every bus, plus off peakers
    devices, dev_w = [], {}
    load_base = rng.uniform(0.4, 1.2, n)
    price_lo, value_lo = 1000.0, 4000.0
    prod_idx = []
    for i in range(n):
        L = _smooth(rng, T, load_base[i], 0.08)
        net = out_p[:, i]
        P_pr = np.maximum(net, 0.0) + L
        P_cs = L + np.maximum(-net, 0.0)
        Q_cs = 0.25 * P_cs
        Q_pr = out_q[:, i] + Q_cs

        # consumer
        cs_pmax = P_cs.max() * rng.uniform(1.1, 1.3)
        cs_pmin = P_cs.min() * rng.uniform(0.0, 0.5)
        v1 = rng.uniform(value_lo + 2000, value_lo + 4000)
        v2 = rng.uniform(value_lo, v1 - 200)
        blk = ((0.6 * cs_pmax, v1), (0.4 * cs_pmax, v2))
        dcs = _device(rng, f"cs{i}", "consumer", bus_ids[i], T, cs_pmin, cs_pmax, Q_cs,
                      blk, P_cs, u0=1, reserves=False)
        devices.append(dcs)
        dev_w[dcs.id] = (np.ones(T), P_cs, Q_cs)

        # producer
        pr_pmax = P_pr.max() * rng.uniform(1.4, 2.0) + 0.3
        pr_pmin = min(P_pr.min() * rng.uniform(0.2, 0.6), 0.3 * pr_pmax)
        c1 = rng.uniform(price_lo, price_lo + 1500)
        c2 = c1 + rng.uniform(100, 800)
        c3 = c2 + rng.uniform(100, 800)
        blk = ((0.4 * pr_pmax, c1), (0.3 * pr_pmax, c2), (0.3 * pr_pmax, c3))
        dpr = _device(rng, f"pr{i}", "producer", bus_ids[i], T, pr_pmin, pr_pmax, Q_pr,
                      blk, P_pr, u0=1, reserves=True)
        devices.append(dpr)
        dev_w[dpr.id] = (np.ones(T), P_pr, Q_pr)
        prod_idx.append(len(devices) - 1)

    n_peak = max(1, n // 4)
    for k, i in enumerate(rng.choice(n, n_peak, replace=False)):
        pmax = rng.uniform(0.5, 1.5)
        c1 = rng.uniform(2500, 3500)
        blk = ((0.5 * pmax, c1), (0.5 * pmax, c1 + rng.uniform(100, 500)))
        dpk = _device(rng, f"pk{k}", "producer", bus_ids[int(i)], T, 0.3 * pmax, pmax,
                      np.zeros(T), blk, np.zeros(T), u0=0, reserves=True)
        devices.append(dpk)
        dev_w[dpk.id] = (np.zeros(T), np.full(T, dpk.p0), np.zeros(T))

    # capacity margin check
    cap = sum(np.array(d.p_max) for d in devices if d.is_producer)
    dem = sum(np.array(d.p_max) for d in devices if not d.is_producer)
    if np.any(cap < 1.2 * dem):
        return None

    # witness reserves and zone requirements
    res_w = {d.id: _witness_reserves(d, *dev_w[d.id]) for d in devices}
    zones = []
    members_p = [d.id for d in devices]
    zone_sets = [("zp0", members_p)]
    if n >= 10:
        half = set(bus_ids[: n // 2])
        zone_sets = [("zp0", [d.id for d in devices if d.bus in half]),
                     ("zp1", [d.id for d in devices if d.bus not in half])]
    for zid, mem in zone_sets:
        req = {}
        for prod in ("rgu", "rgd", "scr", "nsc", "rru", "rrd"):
            tot = sum(sum(res_w[m][p] for p in ZONE_PROVIDERS[prod]) for m in mem)
            req[prod] = tuple(float(x) for x in 0.9 * np.asarray(tot))
        zones.append(Zone(zid, "p", tuple(mem), tuple(req.items()),
                          tuple((p, 5000.0) for p in req)))
    req = {}
    for prod in ("qru", "qrd"):
        tot = sum(res_w[m][prod] for m in members_p)
        req[prod] = tuple(float(x) for x in 0.9 * np.asarray(tot))
    zones.append(Zone("zq0", "q", tuple(members_p), tuple(req.items()),
                      tuple((p, 2000.0) for p in req)))

    branches = []
    for j, (i, k) in enumerate(edges):
        branches.append(Branch(
            id=f"br{j}", fr=bus_ids[i], to=bus_ids[k], g_sr=float(g[j]), b_sr=float(b[j]),
            b_ch=float(bch[j]), x=float(x[j]), s_max=float(s_max[j]),
            s_max_ctg=float(1.25 * s_max[j]), tau_min=float(tau_lo[j]), tau_max=float(tau_hi[j]),
            phi_min=float(phi_lo[j]), phi_max=float(phi_hi[j])))
    ctgs = tuple(Contingency(f"ctg{j}", f"br{j}") for j in range(nbr)
                 if outage_keeps_connected(n, edges, j))
    buses = tuple(Bus(bus_ids[i], 0.9, 1.1, i == 0) for i in range(n))
    witness = _witness_solution(bus_ids, v_w, th_w, branches, tau_w, phi_w, dc_lines, dc_w,
                                shunts, sh_w, devices, dev_w, res_w, T)
    case = Case(TimeGrid(tuple([1.0] * T), 0.0, 60.0), buses, tuple(branches), tuple(dc_lines),
                tuple(shunts), tuple(devices), tuple(zones), ctgs,
                Penalties(1e6, 1e6, 1e5), witness=witness)
    validate_case(case)
    return case


def _device(rng, did, kind, bus, T, pmin, pmax, Q_w, blocks, P_w, u0, reserves):
    qspan = max(0.5, 0.5 * pmax)
    q_min = np.minimum(Q_w.min(), 0.0) - qspan
    q_max = np.maximum(Q_w.max(), 0.0) + qspan
    dP = np.abs(np.diff(P_w)).max() if T > 1 else 0.0
    ramp = max(1.3 * dP, 0.15 * pmax) + 1e-3
    p0 = float(P_w[0] + rng.uniform(-0.5, 0.5) * 0.5 * ramp) if u0 else float(pmin)
    p0 = float(np.clip(p0, pmin, pmax))
    rc, rm = (), ()
    if reserves:
        rc = tuple((p, float(rng.uniform(10, 200))) for p in RESERVE_PRODUCTS)
        rm = tuple((p, float(0.3 * pmax)) for p in RESERVE_PRODUCTS)
    on_cost = float(rng.uniform(50, 300)) if kind == "producer" else 0.0
    return Device(
        id=did, kind=kind, bus=bus,
        p_min=tuple([float(pmin)] * T), p_max=tuple([float(pmax)] * T),
        q_min=tuple([float(q_min)] * T), q_max=tuple([float(q_max)] * T),
        cost_blocks=tuple([tuple((float(s), float(c)) for s, c in blocks)] * T),
        ramp_up=float(ramp), ramp_down=float(ramp),
        ramp_startup=float(pmin + ramp), ramp_shutdown=float(pmin + ramp),
        startup_cost=float(rng.uniform(500, 2000)) if kind == "producer" else 0.0,
        shutdown_cost=float(rng.uniform(0, 300)) if kind == "producer" else 0.0,
        on_cost=on_cost,
        min_up=int(rng.integers(1, 3)), min_down=int(rng.integers(1, 3)),
        u0=int(u0), p0=p0, reserve_cost=rc, reserve_max=rm)


def _witness_reserves(d: Device, u, P, Q):
    """Reserves that fit strictly inside every headroom row of the witness."""
    T = len(u)
    rm = dict(d.reserve_max)
    out = {p: np.zeros(T) for p in RESERVE_PRODUCTS}
    if not rm:
        return out
    pmax, pmin = np.array(d.p_max), np.array(d.p_min)
    qmax, qmin = np.array(d.q_max), np.array(d.q_min)
    on = u > 0.5
    up_room = np.where(on, pmax - P, 0.0)
    dn_room = np.where(on, P - pmin, 0.0)
    for p in ("rgu", "scr", "rru_on"):
        out[p] = np.minimum(rm[p], 0.3 * up_room)
    for p in ("rgd", "rrd_on"):
        out[p] = np.minimum(rm[p], 0.45 * dn_room)
    off_room = np.where(on, 0.0, pmax)
    out["nsc"] = np.minimum(rm["nsc"], 0.45 * off_room)
    out["rru_off"] = np.minimum(rm["rru_off"], 0.45 * off_room)
    out["rrd_off"] = np.minimum(rm["rrd_off"], 0.9 * off_room)
    out["qru"] = np.minimum(rm["qru"], np.where(on, 0.9 * (qmax - Q), 0.0))
    out["qrd"] = np.minimum(rm["qrd"], np.where(on, 0.9 * (Q - qmin), 0.0))
    return out


def _witness_solution(bus_ids, v_w, th_w, branches, tau_w, phi_w, dc_lines, dc_w, shunts,
                      sh_w, devices, dev_w, res_w, T):
    def lst(a):
        return [float(x) for x in a]

    sol = {"T": T}
    sol["buses"] = {bid: {"v": lst(v_w[:, i]), "theta": lst(th_w[:, i])}
                    for i, bid in enumerate(bus_ids)}
    sol["branches"] = {br.id: {"phi": lst(phi_w[:, j]), "tau": lst(tau_w[:, j])}
                       for j, br in enumerate(branches)}
    sol["dc_lines"] = {}
    for dc in dc_lines:
        p, qf, qt = dc_w
        sol["dc_lines"][dc.id] = {"p_dc": lst(p), "qfr_dc": lst(qf), "qto_dc": lst(qt)}
    sol["shunts"] = {sh.id: {"u_sh": [float(u)] * T} for sh, u in zip(shunts, sh_w)}
    sol["devices"] = {}
    for d in devices:
        u, P, Q = dev_w[d.id]
        rec = {"u_on": lst(u), "p_on": lst(P), "q": lst(Q)}
        for p in RESERVE_PRODUCTS:
            rec[p] = lst(res_w[d.id][p])
        sol["devices"][d.id] = rec
    return sol
