"""Case data model and the on-disk case format.

A case is immutable after loading.  Numeric kernels never touch the
record objects directly; they read the packed arrays from
:attr:`Case.arrays`, which is computed once and cached on the instance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

RESERVE_PRODUCTS = (
    "rgu", "rgd", "scr", "nsc", "rru_on", "rru_off", "rrd_on", "rrd_off", "qru", "qrd",
)
# zonal requirement products; rru/rrd pool the online and offline provisions
ZONE_PRODUCTS = ("rgu", "rgd", "scr", "nsc", "rru", "rrd", "qru", "qrd")
P_ZONE_PRODUCTS = ZONE_PRODUCTS[:6]
Q_ZONE_PRODUCTS = ZONE_PRODUCTS[6:]
ZONE_PROVIDERS = {
    "rgu": ("rgu",), "rgd": ("rgd",), "scr": ("scr",), "nsc": ("nsc",),
    "rru": ("rru_on", "rru_off"), "rrd": ("rrd_on", "rrd_off"),
    "qru": ("qru",), "qrd": ("qrd",),
}


class CaseError(ValueError):
    """Raised when a case file cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class TimeGrid:
    durations: tuple[float, ...]
    t0: float = 0.0
    tf: float = 60.0

    @property
    def T(self) -> int:
        return len(self.durations)


@dataclass(frozen=True)
class Bus:
    id: str
    v_min: float
    v_max: float
    ref: bool = False


@dataclass(frozen=True)
class Branch:
    id: str
    fr: str
    to: str
    g_sr: float
    b_sr: float
    b_ch: float
    x: float
    s_max: float
    s_max_ctg: float
    tau_min: float = 1.0
    tau_max: float = 1.0
    phi_min: float = 0.0
    phi_max: float = 0.0

    @property
    def is_transformer(self) -> bool:
        return self.tau_min != self.tau_max or self.phi_min != self.phi_max


@dataclass(frozen=True)
class DcLine:
    id: str
    fr: str
    to: str
    p_max: float
    qfr_min: float
    qfr_max: float
    qto_min: float
    qto_max: float


@dataclass(frozen=True)
class Shunt:
    id: str
    bus: str
    steps: int
    g_step: float
    b_step: float
    init_steps: int = 0


@dataclass(frozen=True)
class Device:
    id: str
    kind: str  # "producer" | "consumer"
    bus: str
    p_min: tuple[float, ...]
    p_max: tuple[float, ...]
    q_min: tuple[float, ...]
    q_max: tuple[float, ...]
    cost_blocks: tuple[tuple[tuple[float, float], ...], ...]
    ramp_up: float
    ramp_down: float
    ramp_startup: float
    ramp_shutdown: float
    startup_cost: float = 0.0
    shutdown_cost: float = 0.0
    on_cost: float = 0.0
    min_up: int = 1
    min_down: int = 1
    init_dwell: int | None = None
    u0: int = 1
    p0: float = 0.0
    reserve_cost: tuple[tuple[str, float], ...] = ()
    reserve_max: tuple[tuple[str, float], ...] = ()

    @property
    def is_producer(self) -> bool:
        return self.kind == "producer"


@dataclass(frozen=True)
class Zone:
    id: str
    kind: str  # "p" | "q"
    devices: tuple[str, ...]
    requirements: tuple[tuple[str, tuple[float, ...]], ...]
    penalties: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class Contingency:
    id: str
    branch: str


@dataclass(frozen=True)
class Penalties:
    c_p: float
    c_q: float
    c_s: float


@dataclass(frozen=True)
class Case:
    time_grid: TimeGrid
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    dc_lines: tuple[DcLine, ...]
    shunts: tuple[Shunt, ...]
    devices: tuple[Device, ...]
    zones: tuple[Zone, ...]
    contingencies: tuple[Contingency, ...]
    penalties: Penalties
    base_mva: float = 100.0
    witness: Any = field(default=None, compare=False, repr=False)

    @property
    def T(self) -> int:
        return self.time_grid.T

    @cached_property
    def arrays(self) -> "CaseArrays":
        return CaseArrays(self)


class CaseArrays:
    """Packed numpy view of a case, shared by every numeric kernel."""

    def __init__(self, case: Case):
        T = case.T
        self.T = T
        self.d = np.array(case.time_grid.durations, dtype=float)
        self.bus_ids = [b.id for b in case.buses]
        bix = {b: i for i, b in enumerate(self.bus_ids)}
        self.bus_index = bix
        self.nb = len(case.buses)
        self.ref = next(i for i, b in enumerate(case.buses) if b.ref)
        self.v_min = np.array([b.v_min for b in case.buses])
        self.v_max = np.array([b.v_max for b in case.buses])

        br = case.branches
        self.nbr = len(br)
        self.branch_ids = [b.id for b in br]
        self.br_fr = np.array([bix[b.fr] for b in br], dtype=int)
        self.br_to = np.array([bix[b.to] for b in br], dtype=int)
        self.g = np.array([b.g_sr for b in br], dtype=float)
        self.b = np.array([b.b_sr for b in br], dtype=float)
        self.bch = np.array([b.b_ch for b in br], dtype=float)
        self.x = np.array([b.x for b in br], dtype=float)
        self.s_max = np.array([b.s_max for b in br], dtype=float)
        self.s_max_ctg = np.array([b.s_max_ctg for b in br], dtype=float)
        self.tau_min = np.array([b.tau_min for b in br], dtype=float)
        self.tau_max = np.array([b.tau_max for b in br], dtype=float)
        self.phi_min = np.array([b.phi_min for b in br], dtype=float)
        self.phi_max = np.array([b.phi_max for b in br], dtype=float)
        self.is_xfm = np.array([b.is_transformer for b in br], dtype=bool)

        dc = case.dc_lines
        self.ndc = len(dc)
        self.dc_ids = [d.id for d in dc]
        self.dc_fr = np.array([bix[d.fr] for d in dc], dtype=int)
        self.dc_to = np.array([bix[d.to] for d in dc], dtype=int)
        self.dc_pmax = np.array([d.p_max for d in dc], dtype=float)
        self.dc_qfr = np.array([[d.qfr_min, d.qfr_max] for d in dc], dtype=float).reshape(-1, 2)
        self.dc_qto = np.array([[d.qto_min, d.qto_max] for d in dc], dtype=float).reshape(-1, 2)

        sh = case.shunts
        self.nsh = len(sh)
        self.shunt_ids = [s.id for s in sh]
        self.sh_bus = np.array([bix[s.bus] for s in sh], dtype=int)
        self.sh_g = np.array([s.g_step for s in sh], dtype=float)
        self.sh_b = np.array([s.b_step for s in sh], dtype=float)
        self.sh_steps = np.array([s.steps for s in sh], dtype=float)
        self.sh_init = np.array([s.init_steps for s in sh], dtype=float)

        dv = case.devices
        nd = len(dv)
        self.nd = nd
        self.device_ids = [d.id for d in dv]
        self.device_index = {d: i for i, d in enumerate(self.device_ids)}
        self.dev_bus = np.array([bix[d.bus] for d in dv], dtype=int)
        self.is_pr = np.array([d.is_producer for d in dv], dtype=bool)
        # +1 producer / -1 consumer: injection sign of the device's power
        self.sign = np.where(self.is_pr, 1.0, -1.0)
        self.p_min = np.array([d.p_min for d in dv], dtype=float).reshape(nd, T).T.copy()
        self.p_max = np.array([d.p_max for d in dv], dtype=float).reshape(nd, T).T.copy()
        self.q_min = np.array([d.q_min for d in dv], dtype=float).reshape(nd, T).T.copy()
        self.q_max = np.array([d.q_max for d in dv], dtype=float).reshape(nd, T).T.copy()
        M = max([len(bl) for d in dv for bl in d.cost_blocks] + [1])
        self.n_blocks = M
        self.blk_size = np.zeros((T, nd, M))
        self.blk_price = np.zeros((T, nd, M))
        for j, d in enumerate(dv):
            for t, bl in enumerate(d.cost_blocks):
                for m, (size, price) in enumerate(bl):
                    self.blk_size[t, j, m] = size
                    self.blk_price[t, j, m] = price
                # pad with the last price so excess power stays priced at the margin
                if bl:
                    self.blk_price[t, j, len(bl):] = bl[-1][1]
        self.blk_cum = np.cumsum(self.blk_size, axis=2) - self.blk_size
        self.blk_total = self.blk_size.sum(axis=2)
        self.ramp_up = np.array([d.ramp_up for d in dv], dtype=float)
        self.ramp_down = np.array([d.ramp_down for d in dv], dtype=float)
        self.ramp_su = np.array([d.ramp_startup for d in dv], dtype=float)
        self.ramp_sd = np.array([d.ramp_shutdown for d in dv], dtype=float)
        self.c_su = np.array([d.startup_cost for d in dv], dtype=float)
        self.c_sd = np.array([d.shutdown_cost for d in dv], dtype=float)
        self.c_on = np.array([d.on_cost for d in dv], dtype=float)
        self.min_up = np.array([d.min_up for d in dv], dtype=int)
        self.min_down = np.array([d.min_down for d in dv], dtype=int)
        big = 10 ** 6
        self.init_dwell = np.array(
            [big if d.init_dwell is None else d.init_dwell for d in dv], dtype=int)
        self.u0 = np.array([d.u0 for d in dv], dtype=float)
        self.p0 = np.array([d.p0 for d in dv], dtype=float)
        self.r_cost = np.zeros((nd, len(RESERVE_PRODUCTS)))
        self.r_max = np.zeros((nd, len(RESERVE_PRODUCTS)))
        ridx = {p: k for k, p in enumerate(RESERVE_PRODUCTS)}
        for j, d in enumerate(dv):
            for p, c in d.reserve_cost:
                self.r_cost[j, ridx[p]] = c
            for p, c in d.reserve_max:
                self.r_max[j, ridx[p]] = c

        zs = case.zones
        nz = len(zs)
        self.nz = nz
        self.zone_ids = [z.id for z in zs]
        self.zone_is_p = np.array([z.kind == "p" for z in zs], dtype=bool)
        self.zone_member = np.zeros((nz, nd))
        self.zone_req = np.zeros((T, nz, len(ZONE_PRODUCTS)))
        self.zone_pen = np.zeros((nz, len(ZONE_PRODUCTS)))
        zidx = {p: k for k, p in enumerate(ZONE_PRODUCTS)}
        for n, z in enumerate(zs):
            for did in z.devices:
                self.zone_member[n, self.device_index[did]] = 1.0
            for p, req in z.requirements:
                self.zone_req[:, n, zidx[p]] = req
            for p, c in z.penalties:
                self.zone_pen[n, zidx[p]] = c

        self.branch_index = {b: i for i, b in enumerate(self.branch_ids)}
        self.ctg_ids = [c.id for c in case.contingencies]
        self.ctg_branch = np.array(
            [self.branch_index[c.branch] for c in case.contingencies], dtype=int)

        pen = case.penalties
        self.c_p, self.c_q, self.c_s = pen.c_p, pen.c_q, pen.c_s

        # incidence of devices / dc lines / shunts onto buses (dense, desk scale)
        self.dev_onto_bus = np.zeros((self.nb, nd))
        self.dev_onto_bus[self.dev_bus, np.arange(nd)] = 1.0


# ----------------------------------------------------------------------------
# validation

def _connected(n: int, edges: list[tuple[int, int]]) -> bool:
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n)}) == 1


def validate_case(case: Case) -> None:
    """Raise :class:`CaseError` naming the first violated invariant."""
    tg = case.time_grid
    if tg.T < 1:
        raise CaseError("time_grid: at least one period required")
    if any(not d > 0 for d in tg.durations):
        raise CaseError("time_grid.durations: every duration must be positive")
    if not tg.tf > tg.t0:
        raise CaseError("time_grid: tf must exceed t0")
    if not case.buses:
        raise CaseError("buses: at least one bus required")
    nref = sum(b.ref for b in case.buses)
    if nref == 0:
        raise CaseError("buses: no reference bus")
    if nref > 1:
        raise CaseError("buses: multiple reference buses")
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("buses: duplicate bus id")
    bset = set(ids)
    for b in case.buses:
        if not 0 < b.v_min <= b.v_max:
            raise CaseError(f"buses[{b.id}]: require 0 < v_min <= v_max")
    for br in case.branches:
        if br.fr not in bset or br.to not in bset:
            raise CaseError(f"branches[{br.id}]: unknown bus")
        if br.fr == br.to:
            raise CaseError(f"branches[{br.id}]: self loop")
        if br.b_sr == 0:
            raise CaseError(f"branches[{br.id}]: b_sr must be nonzero")
        if not br.x > 0:
            raise CaseError(f"branches[{br.id}]: x must be positive")
        if not br.s_max_ctg >= br.s_max > 0:
            raise CaseError(f"branches[{br.id}]: require s_max_ctg >= s_max > 0")
        if br.tau_min > br.tau_max or br.phi_min > br.phi_max or br.tau_min <= 0:
            raise CaseError(f"branches[{br.id}]: inconsistent tap/shift bounds")
    for dc in case.dc_lines:
        if dc.fr not in bset or dc.to not in bset:
            raise CaseError(f"dc_lines[{dc.id}]: unknown bus")
        if dc.p_max < 0 or dc.qfr_min > dc.qfr_max or dc.qto_min > dc.qto_max:
            raise CaseError(f"dc_lines[{dc.id}]: inconsistent limits")
    for sh in case.shunts:
        if sh.bus not in bset:
            raise CaseError(f"shunts[{sh.id}]: unknown bus")
        if sh.steps < 0 or not 0 <= sh.init_steps <= sh.steps:
            raise CaseError(f"shunts[{sh.id}]: invalid step count")
    T = tg.T
    dids = set()
    for d in case.devices:
        where = f"devices[{d.id}]"
        if d.id in dids:
            raise CaseError(f"{where}: duplicate device id")
        dids.add(d.id)
        if d.kind not in ("producer", "consumer"):
            raise CaseError(f"{where}: kind must be producer or consumer")
        if d.bus not in bset:
            raise CaseError(f"{where}: unknown bus")
        for name in ("p_min", "p_max", "q_min", "q_max", "cost_blocks"):
            if len(getattr(d, name)) != T:
                raise CaseError(f"{where}.{name}: expected {T} periods")
        for t in range(T):
            if not 0 <= d.p_min[t] <= d.p_max[t]:
                raise CaseError(f"{where}: require 0 <= p_min <= p_max at t={t}")
            if d.q_min[t] > d.q_max[t]:
                raise CaseError(f"{where}: q_min > q_max at t={t}")
            blocks = d.cost_blocks[t]
            if any(size < 0 for size, _ in blocks):
                raise CaseError(f"{where}.cost_blocks: negative block size")
            prices = [c for _, c in blocks]
            diffs = np.diff(prices) if len(prices) > 1 else np.zeros(0)
            if d.is_producer and np.any(diffs < 0):
                raise CaseError(f"{where}.cost_blocks: producer costs must be nondecreasing")
            if not d.is_producer and np.any(diffs > 0):
                raise CaseError(f"{where}.cost_blocks: consumer values must be nonincreasing")
        if min(d.ramp_up, d.ramp_down, d.ramp_startup, d.ramp_shutdown) < 0:
            raise CaseError(f"{where}: ramp rates must be nonnegative")
        if d.u0 not in (0, 1):
            raise CaseError(f"{where}: u0 must be 0 or 1")
        if d.min_up < 1 or d.min_down < 1:
            raise CaseError(f"{where}: min up/down times must be >= 1")
        for p, _ in d.reserve_cost + d.reserve_max:
            if p not in RESERVE_PRODUCTS:
                raise CaseError(f"{where}: unknown reserve product {p!r}")
    for z in case.zones:
        if z.kind not in ("p", "q"):
            raise CaseError(f"zones[{z.id}]: kind must be 'p' or 'q'")
        allowed = P_ZONE_PRODUCTS if z.kind == "p" else Q_ZONE_PRODUCTS
        for did in z.devices:
            if did not in dids:
                raise CaseError(f"zones[{z.id}]: unknown device {did!r}")
        for p, req in z.requirements:
            if p not in allowed:
                raise CaseError(f"zones[{z.id}]: product {p!r} not valid for a {z.kind}-zone")
            if len(req) != T or any(r < 0 for r in req):
                raise CaseError(f"zones[{z.id}].requirements[{p}]: need {T} nonnegative values")
        for p, c in z.penalties:
            if p not in allowed or c < 0:
                raise CaseError(f"zones[{z.id}].penalties[{p}]: invalid")
    brset = {b.id for b in case.branches}
    for c in case.contingencies:
        if c.branch not in brset:
            raise CaseError(f"contingencies[{c.id}]: unknown branch {c.branch!r}")
    pen = case.penalties
    if min(pen.c_p, pen.c_q, pen.c_s) < 0:
        raise CaseError("penalties: constants must be nonnegative")
    bix = {b: i for i, b in enumerate(ids)}
    edges = [(bix[b.fr], bix[b.to]) for b in case.branches]
    if not _connected(len(ids), edges):
        raise CaseError("branches: base topology is not connected")


# ----------------------------------------------------------------------------
# serialization

def _pairs(d: dict | None) -> tuple:
    return tuple((k, float(v)) for k, v in (d or {}).items())


def case_from_dict(raw: dict) -> Case:
    """Build a validated :class:`Case` from parsed JSON."""
    def need(obj: dict, key: str, where: str):
        if key not in obj:
            raise CaseError(f"{where}: missing field {key!r}")
        return obj[key]

    try:
        tgr = need(raw, "time_grid", "case")
        tg = TimeGrid(tuple(float(x) for x in need(tgr, "durations", "time_grid")),
                      float(tgr.get("t0", 0.0)), float(tgr.get("tf", 60.0)))
        buses = tuple(Bus(str(need(b, "id", f"buses[{i}]")), float(b["v_min"]), float(b["v_max"]),
                          bool(b.get("ref", False)))
                      for i, b in enumerate(need(raw, "buses", "case")))
        branches = tuple(
            Branch(id=str(b["id"]), fr=str(b["fr"]), to=str(b["to"]), g_sr=float(b["g_sr"]),
                   b_sr=float(b["b_sr"]), b_ch=float(b.get("b_ch", 0.0)), x=float(b["x"]),
                   s_max=float(b["s_max"]), s_max_ctg=float(b["s_max_ctg"]),
                   tau_min=float(b.get("tau_min", 1.0)), tau_max=float(b.get("tau_max", 1.0)),
                   phi_min=float(b.get("phi_min", 0.0)), phi_max=float(b.get("phi_max", 0.0)))
            for b in need(raw, "branches", "case"))
        dc_lines = tuple(
            DcLine(str(d["id"]), str(d["fr"]), str(d["to"]), float(d["p_max"]),
                   float(d["qfr_min"]), float(d["qfr_max"]), float(d["qto_min"]), float(d["qto_max"]))
            for d in raw.get("dc_lines", []))
        shunts = tuple(
            Shunt(str(s["id"]), str(s["bus"]), int(s["steps"]), float(s["g_step"]),
                  float(s["b_step"]), int(s.get("init_steps", 0)))
            for s in raw.get("shunts", []))
        devices = []
        for i, d in enumerate(need(raw, "devices", "case")):
            where = f"devices[{i}]"
            devices.append(Device(
                id=str(need(d, "id", where)), kind=str(need(d, "kind", where)),
                bus=str(need(d, "bus", where)),
                p_min=tuple(map(float, need(d, "p_min", where))),
                p_max=tuple(map(float, need(d, "p_max", where))),
                q_min=tuple(map(float, need(d, "q_min", where))),
                q_max=tuple(map(float, need(d, "q_max", where))),
                cost_blocks=tuple(tuple((float(s), float(c)) for s, c in bl)
                                  for bl in need(d, "cost_blocks", where)),
                ramp_up=float(need(d, "ramp_up", where)),
                ramp_down=float(need(d, "ramp_down", where)),
                ramp_startup=float(d.get("ramp_startup", d["ramp_up"])),
                ramp_shutdown=float(d.get("ramp_shutdown", d["ramp_down"])),
                startup_cost=float(d.get("startup_cost", 0.0)),
                shutdown_cost=float(d.get("shutdown_cost", 0.0)),
                on_cost=float(d.get("on_cost", 0.0)),
                min_up=int(d.get("min_up", 1)), min_down=int(d.get("min_down", 1)),
                init_dwell=None if d.get("init_dwell") is None else int(d["init_dwell"]),
                u0=int(d.get("u0", 1)), p0=float(d.get("p0", 0.0)),
                reserve_cost=_pairs(d.get("reserve_cost")),
                reserve_max=_pairs(d.get("reserve_max")),
            ))
        zones = tuple(
            Zone(id=str(z["id"]), kind=str(z["kind"]), devices=tuple(map(str, z.get("devices", []))),
                 requirements=tuple((k, tuple(map(float, v)))
                                    for k, v in z.get("requirements", {}).items()),
                 penalties=_pairs(z.get("penalties")))
            for z in raw.get("zones", []))
        ctgs = tuple(Contingency(str(c["id"]), str(c["branch"])) for c in raw.get("contingencies", []))
        pr = need(raw, "penalties", "case")
        pen = Penalties(float(pr["c_p"]), float(pr["c_q"]), float(pr["c_s"]))
    except CaseError:
        raise
    except KeyError as exc:
        raise CaseError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise CaseError(f"malformed field: {exc}") from None
    case = Case(tg, buses, branches, dc_lines, shunts, tuple(devices), zones, ctgs, pen,
                base_mva=float(raw.get("base_mva", 100.0)), witness=raw.get("witness"))
    validate_case(case)
    return case


def case_to_dict(case: Case) -> dict:
    tg = case.time_grid
    out: dict[str, Any] = {
        "base_mva": case.base_mva,
        "time_grid": {"durations": list(tg.durations), "t0": tg.t0, "tf": tg.tf},
        "buses": [{"id": b.id, "v_min": b.v_min, "v_max": b.v_max, "ref": b.ref} for b in case.buses],
        "branches": [
            {"id": b.id, "fr": b.fr, "to": b.to, "g_sr": b.g_sr, "b_sr": b.b_sr, "b_ch": b.b_ch,
             "x": b.x, "s_max": b.s_max, "s_max_ctg": b.s_max_ctg, "tau_min": b.tau_min,
             "tau_max": b.tau_max, "phi_min": b.phi_min, "phi_max": b.phi_max}
            for b in case.branches],
        "dc_lines": [
            {"id": d.id, "fr": d.fr, "to": d.to, "p_max": d.p_max, "qfr_min": d.qfr_min,
             "qfr_max": d.qfr_max, "qto_min": d.qto_min, "qto_max": d.qto_max}
            for d in case.dc_lines],
        "shunts": [
            {"id": s.id, "bus": s.bus, "steps": s.steps, "g_step": s.g_step, "b_step": s.b_step,
             "init_steps": s.init_steps}
            for s in case.shunts],
        "devices": [
            {"id": d.id, "kind": d.kind, "bus": d.bus, "p_min": list(d.p_min), "p_max": list(d.p_max),
             "q_min": list(d.q_min), "q_max": list(d.q_max),
             "cost_blocks": [[list(b) for b in bl] for bl in d.cost_blocks],
             "ramp_up": d.ramp_up, "ramp_down": d.ramp_down, "ramp_startup": d.ramp_startup,
             "ramp_shutdown": d.ramp_shutdown, "startup_cost": d.startup_cost,
             "shutdown_cost": d.shutdown_cost, "on_cost": d.on_cost, "min_up": d.min_up,
             "min_down": d.min_down, "init_dwell": d.init_dwell, "u0": d.u0, "p0": d.p0,
             "reserve_cost": dict(d.reserve_cost), "reserve_max": dict(d.reserve_max)}
            for d in case.devices],
        "zones": [
            {"id": z.id, "kind": z.kind, "devices": list(z.devices),
             "requirements": {k: list(v) for k, v in z.requirements},
             "penalties": dict(z.penalties)}
            for z in case.zones],
        "contingencies": [{"id": c.id, "branch": c.branch} for c in case.contingencies],
        "penalties": {"c_p": case.penalties.c_p, "c_q": case.penalties.c_q, "c_s": case.penalties.c_s},
    }
    if case.witness is not None:
        out["witness"] = case.witness
    return out


def load_case(path: str | Path) -> Case:
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise CaseError(f"{path}: top level must be an object")
    return case_from_dict(raw)


def dumps_case(case: Case) -> str:
    return json.dumps(case_to_dict(case), indent=1)


def save_case(case: Case, path: str | Path) -> None:
    Path(path).write_text(dumps_case(case))


def finite(x: float) -> bool:
    return math.isfinite(x)
