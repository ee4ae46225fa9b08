"""Small hand-built cases and random instances for tests."""

from __future__ import annotations

import copy

import numpy as np

from adamuc.case import case_from_dict
from adamuc.solvers import DeviceProblem
from adamuc.state import state_from_solution


def device(did, kind="producer", bus="b0", T=1, p_min=0.0, p_max=1.0, q_min=-1.0, q_max=1.0,
           blocks=((10.0, 10.0),), ramp=10.0, u0=1, p0=0.0, **extra):
    d = {
        "id": did, "kind": kind, "bus": bus,
        "p_min": [p_min] * T if isinstance(p_min, (int, float)) else list(p_min),
        "p_max": [p_max] * T if isinstance(p_max, (int, float)) else list(p_max),
        "q_min": [q_min] * T, "q_max": [q_max] * T,
        "cost_blocks": [[list(b) for b in blocks] for _ in range(T)],
        "ramp_up": ramp, "ramp_down": ramp, "ramp_startup": ramp, "ramp_shutdown": ramp,
        "u0": u0, "p0": p0,
    }
    d.update(extra)
    return d


def line(bid, fr, to, b_sr=-10.0, g_sr=0.0, x=0.1, s_max=10.0, s_max_ctg=10.0, b_ch=0.0, **extra):
    out = {"id": bid, "fr": fr, "to": to, "g_sr": g_sr, "b_sr": b_sr, "b_ch": b_ch, "x": x,
           "s_max": s_max, "s_max_ctg": s_max_ctg}
    out.update(extra)
    return out


def case_dict(T=1, n_bus=2, branches=None, devices=(), zones=(), contingencies=(),
              penalties=(1e3, 1e3, 1e3), durations=None, shunts=(), dc_lines=()):
    buses = [{"id": f"b{i}", "v_min": 0.9, "v_max": 1.1, "ref": i == 0} for i in range(n_bus)]
    if branches is None:
        branches = [line(f"l{i}", f"b{i}", f"b{i + 1}") for i in range(n_bus - 1)]
    return {
        "time_grid": {"durations": list(durations or [1.0] * T)},
        "buses": buses, "branches": list(branches), "dc_lines": list(dc_lines),
        "shunts": list(shunts), "devices": [copy.deepcopy(d) for d in devices],
        "zones": list(zones), "contingencies": list(contingencies),
        "penalties": dict(zip(("c_p", "c_q", "c_s"), penalties)),
    }


def make_case(**kw):
    return case_from_dict(case_dict(**kw))


def one_market_case(demand=1.0, value=100.0, cap=2.0, cost=10.0, T=1):
    """One producer and one consumer at the reference bus of a 2-bus system."""
    return make_case(T=T, devices=[
        device("g", "producer", "b0", T, 0.0, cap, blocks=((cap, cost),)),
        device("c", "consumer", "b0", T, 0.0, demand, blocks=((demand, value),)),
    ])


def ramp_feasible_start(case, rng, spread=0.3):
    """Witness state with device powers randomized inside their ramp windows.

    Binaries stay at the witness values.  Each period is drawn uniformly
    from the window left by the previous period, so every ramp row holds.
    """
    st = state_from_solution(case, case.witness)
    a = case.arrays
    u = st["u_on"]
    Pprev, uprev = a.u0 * a.p0, a.u0.astype(float)
    for t in range(case.T):
        su, sd = np.maximum(u[t] - uprev, 0.0), np.maximum(uprev - u[t], 0.0)
        lo = np.maximum(Pprev - a.ramp_down - sd * a.ramp_sd, u[t] * a.p_min[t])
        hi = np.minimum(Pprev + a.ramp_up + su * a.ramp_su, u[t] * a.p_max[t])
        P = u[t] * st["p_on"][t]
        width = spread * (hi - lo)
        P = np.clip(P + width * rng.uniform(-1.0, 1.0, P.size), lo, hi)
        on = u[t] > 0
        st["p_on"][t] = np.where(on, P / np.where(on, u[t], 1.0), st["p_on"][t])
        Pprev, uprev = u[t] * st["p_on"][t], u[t]
    return st


def random_device_problem(rng, T, min_up=1, min_down=1, u0=None, ramp=None):
    """Random single-device projection instance with targets that need not be feasible."""
    p_max = rng.uniform(1.0, 2.0, T)
    p_min = 0.3 * p_max
    r_max = rng.uniform(0.0, 0.5, 10)
    u0 = int(rng.integers(0, 2)) if u0 is None else u0
    ramp = rng.uniform(0.3, 1.0) if ramp is None else ramp
    return DeviceProblem(
        s=1.0, u0=u0, p0=u0 * float(p_min[0]), min_up=min_up, min_down=min_down,
        init_dwell=int(rng.integers(1, 4)),
        p_min=p_min, p_max=p_max, q_min=-0.5 * np.ones(T), q_max=0.5 * np.ones(T),
        r_max=r_max, ramp_up=ramp, ramp_down=ramp, ramp_su=float(p_min.max()) + ramp,
        ramp_sd=float(p_min.max()) + ramp,
        u_ref=rng.uniform(0, 1, T), p_ref=rng.uniform(0, 2, T), q_ref=rng.uniform(-0.6, 0.6, T),
        r_ref=rng.uniform(0, 0.4, (T, 10)), w_r=0.1)
