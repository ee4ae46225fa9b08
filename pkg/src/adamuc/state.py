"""Flat storage of every basis variable, its bounds box and Adam buffers.

All families live in one contiguous vector so the optimizer can update
and clip them with a handful of vectorised operations.  Each family is a
``(T, n)`` view into that vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .case import RESERVE_PRODUCTS, Case

# (family, element kind, step-size group)
FAMILIES = (
    ("v", "bus", "angle"),
    ("theta", "bus", "angle"),
    ("phi", "branch", "angle"),
    ("tau", "branch", "angle"),
    ("p_dc", "dc", "power"),
    ("qfr_dc", "dc", "power"),
    ("qto_dc", "dc", "power"),
    ("p_on", "device", "power"),
    ("q", "device", "power"),
) + tuple((p, "device", "power") for p in RESERVE_PRODUCTS) + (
    ("u_sh", "shunt", "binary"),
    ("u_on", "device", "binary"),
)
FAMILY_NAMES = tuple(f for f, _, _ in FAMILIES)
FAMILY_KIND = {f: k for f, k, _ in FAMILIES}
FAMILY_GROUP = {f: g for f, _, g in FAMILIES}
STEP_GROUPS = ("angle", "power", "binary")


class Layout:
    """Offsets of each family inside the flat vector."""

    def __init__(self, case: Case):
        a = case.arrays
        counts = {"bus": a.nb, "branch": a.nbr, "dc": a.ndc, "device": a.nd, "shunt": a.nsh}
        self.T = a.T
        self.width = {f: counts[k] for f, k, _ in FAMILIES}
        self.slices: dict[str, slice] = {}
        off = 0
        for f in FAMILY_NAMES:
            size = self.T * self.width[f]
            self.slices[f] = slice(off, off + size)
            off += size
        self.size = off
        self.group = np.empty(off, dtype=np.int8)
        for f in FAMILY_NAMES:
            self.group[self.slices[f]] = STEP_GROUPS.index(FAMILY_GROUP[f])

    def view(self, vec: np.ndarray, family: str) -> np.ndarray:
        return vec[self.slices[family]].reshape(self.T, self.width[family])

    def locate(self, index: int) -> tuple[str, int, int]:
        """Map a flat index back to (family, t, element)."""
        for f in FAMILY_NAMES:
            sl = self.slices[f]
            if sl.start <= index < sl.stop:
                t, e = divmod(index - sl.start, self.width[f])
                return f, t, e
        raise IndexError(index)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)


class FlatState:
    """Basis variables with bounds box, Adam moments and a frozen mask."""

    def __init__(self, case: Case, x=None, lo=None, hi=None):
        self.case = case
        self.layout = Layout(case)
        n = self.layout.size
        self.x = np.zeros(n) if x is None else np.asarray(x, dtype=float).copy()
        if lo is None or hi is None:
            lo, hi = default_bounds(case, self.layout)
        self.lo = np.asarray(lo, dtype=float).copy()
        self.hi = np.asarray(hi, dtype=float).copy()
        self.m1 = np.zeros(n)
        self.m2 = np.zeros(n)
        self.i = 0
        self.frozen = self.lo == self.hi

    def __getitem__(self, family: str) -> np.ndarray:
        return self.layout.view(self.x, family)

    def bound(self, family: str) -> tuple[np.ndarray, np.ndarray]:
        return self.layout.view(self.lo, family), self.layout.view(self.hi, family)

    def copy(self) -> "FlatState":
        new = FlatState.__new__(FlatState)
        new.case = self.case
        new.layout = self.layout
        new.x = self.x.copy()
        new.lo = self.lo.copy()
        new.hi = self.hi.copy()
        new.m1 = self.m1.copy()
        new.m2 = self.m2.copy()
        new.i = self.i
        new.frozen = self.frozen.copy()
        return new

    def freeze(self, family: str, mask: np.ndarray, values: np.ndarray | None = None) -> None:
        """Pin the masked entries of a family (optionally at new values)."""
        sl = self.layout.slices[family]
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), self[family].shape).ravel()
        if values is not None:
            vals = np.broadcast_to(np.asarray(values, dtype=float), self[family].shape).ravel()
            self.x[sl][mask] = vals[mask]
        self.frozen[sl][mask] = True

    def clip(self) -> None:
        np.clip(self.x, self.lo, self.hi, out=self.x)

    def within_bounds(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.x >= self.lo - tol) and np.all(self.x <= self.hi + tol))

    def reset_moments(self) -> None:
        self.m1[:] = 0.0
        self.m2[:] = 0.0


def default_bounds(case: Case, layout: Layout) -> tuple[np.ndarray, np.ndarray]:
    a = case.arrays
    T = a.T
    lo = layout.zeros()
    hi = layout.zeros()

    def put(f, low, high):
        layout.view(lo, f)[:] = low
        layout.view(hi, f)[:] = high

    put("v", a.v_min, a.v_max)
    th = np.full(a.nb, np.pi)
    th[a.ref] = 0.0
    put("theta", -th, th)
    put("phi", a.phi_min, a.phi_max)
    put("tau", a.tau_min, a.tau_max)
    put("p_dc", -a.dc_pmax, a.dc_pmax)
    put("qfr_dc", a.dc_qfr[:, 0], a.dc_qfr[:, 1])
    put("qto_dc", a.dc_qto[:, 0], a.dc_qto[:, 1])
    put("p_on", a.p_min, a.p_max)
    put("q", a.q_min, a.q_max)
    for k, p in enumerate(RESERVE_PRODUCTS):
        put(p, 0.0, np.broadcast_to(a.r_max[:, k], (T, a.nd)))
    put("u_sh", 0.0, a.sh_steps)
    put("u_on", 0.0, 1.0)
    return lo, hi


def init_state(case: Case) -> FlatState:
    """Flat start: unit voltages, zero angles, devices at their initial status."""
    st = FlatState(case)
    a = case.arrays
    st["v"][:] = 1.0
    st["tau"][:] = 1.0
    st["u_on"][:] = a.u0
    st["p_on"][:] = a.p0
    st["u_sh"][:] = a.sh_init
    st.clip()
    return st


# ----------------------------------------------------------------------------
# solution files

_ELEMENTS = (
    ("buses", "bus", "bus_ids"),
    ("branches", "branch", "branch_ids"),
    ("dc_lines", "dc", "dc_ids"),
    ("shunts", "shunt", "shunt_ids"),
    ("devices", "device", "device_ids"),
)


def state_to_solution(state: FlatState) -> dict:
    """Per-element, per-time arrays for every basis family, keyed by element id."""
    a = state.case.arrays
    out: dict = {"T": a.T}
    for key, kind, ids_attr in _ELEMENTS:
        ids = getattr(a, ids_attr)
        fams = [f for f in FAMILY_NAMES if FAMILY_KIND[f] == kind]
        block = {}
        for e, eid in enumerate(ids):
            block[eid] = {f: [float(x) for x in state[f][:, e]] for f in fams}
        out[key] = block
    return out


class SolutionError(ValueError):
    pass


def solution_arrays(case: Case, sol: dict) -> dict[str, np.ndarray]:
    """Read a solution dict into ``(T, n)`` arrays in case order."""
    a = case.arrays
    T = a.T
    if sol.get("T") != T:
        raise SolutionError(f"solution has T={sol.get('T')}, case has T={T}")
    out = {}
    for key, kind, ids_attr in _ELEMENTS:
        ids = getattr(a, ids_attr)
        block = sol.get(key, {})
        if set(block) != set(ids):
            missing = sorted(set(ids) - set(block))
            extra = sorted(set(block) - set(ids))
            raise SolutionError(f"{key}: element ids do not match case "
                                f"(missing {missing[:3]}, unexpected {extra[:3]})")
        for f in FAMILY_NAMES:
            if FAMILY_KIND[f] != kind:
                continue
            arr = np.zeros((T, len(ids)))
            for e, eid in enumerate(ids):
                vals = block[eid].get(f)
                if vals is None or len(vals) != T:
                    raise SolutionError(f"{key}[{eid}].{f}: expected {T} values")
                arr[:, e] = np.asarray(vals, dtype=float)
            out[f] = arr
    return out


def state_from_solution(case: Case, sol: dict) -> FlatState:
    st = FlatState(case)
    for f, arr in solution_arrays(case, sol).items():
        st[f][:] = arr
    return st


def write_solution(state: FlatState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state_to_solution(state), indent=1))


def read_solution(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SolutionError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


@dataclass
class Gradient:
    """Gradient vector sharing a state's layout."""
    layout: Layout
    g: np.ndarray

    def __getitem__(self, family: str) -> np.ndarray:
        return self.layout.view(self.g, family)
