"""Clipped Adam with per-family step sizes and homotopy schedules."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .state import STEP_GROUPS, FlatState
from .surplus import PenaltyShape


# ----------------------------------------------------------------------------
# schedules

def normalized_time(t_w: float, t0: float, tf: float) -> float:
    t_w = min(max(t_w, t0), tf)
    return 2.0 * (t_w - t0) / (tf - t0) - 1.0


def sigmoid_weight(t_hat: float) -> float:
    """Reflected sigmoid e^{4t}/(0.6 + e^{4t}) on the normalized clock."""
    e = math.exp(4.0 * t_hat)
    return e / (0.6 + e)


def log_blend(v0: float, vf: float, w: float) -> float:
    """``v0 * 10^(w * log10(vf / v0))``: geometric move from v0 toward vf."""
    return v0 * 10.0 ** (w * math.log10(vf / v0))


def schedule_step_size(t_w: float, t0: float, tf: float, alpha0: float, alphaf: float) -> float:
    return log_blend(alpha0, alphaf, sigmoid_weight(normalized_time(t_w, t0, tf)))


def schedule_homotopy(t_w, t0, tf, eps0, epsf, rho0, rhof):
    """(eps, beta_scale, rho) at wall-clock ``t_w``."""
    w = sigmoid_weight(normalized_time(t_w, t0, tf))
    frac = (normalized_time(t_w, t0, tf) + 1.0) / 2.0
    eps = log_blend(eps0, epsf, w)
    beta = 0.1 + 0.9 * frac
    rho = log_blend(rho0, rhof, w)
    return eps, beta, rho


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha0: dict = field(default_factory=lambda: {"angle": 1e-3, "power": 1e-2, "binary": 1e-2})
    alphaf: dict = field(default_factory=lambda: {"angle": 1e-7, "power": 1e-6, "binary": 1e-6})

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam decay/stabilizer")
        for gname in STEP_GROUPS:
            if not self.alpha0[gname] >= self.alphaf[gname] > 0:
                raise ValueError(f"step sizes for {gname}: need alpha0 >= alphaf > 0")


@dataclass
class HomotopyConfig:
    eps0: float = 1e-1
    epsf: float = 1e-7
    rho0: float = 1e4
    rhof: float = 1e7


@dataclass
class Schedule:
    """Schedule values at one clock reading."""
    t_w: float
    alpha: dict
    shape: PenaltyShape


def schedule_at(t_w, t0, tf, adam: AdamConfig, hom: HomotopyConfig) -> Schedule:
    alpha = {g: schedule_step_size(t_w, t0, tf, adam.alpha0[g], adam.alphaf[g])
             for g in STEP_GROUPS}
    eps, beta, rho = schedule_homotopy(t_w, t0, tf, hom.eps0, hom.epsf, hom.rho0, hom.rhof)
    return Schedule(t_w, alpha, PenaltyShape(eps, beta, rho))


# ----------------------------------------------------------------------------
# the update

class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(state: FlatState, grad: np.ndarray, config: AdamConfig, alpha: dict) -> None:
    """One clipped Adam update in place; frozen entries are left untouched.

    The stabilizer is added with the sign of the bias-corrected first
    moment, so a zero gradient is a fixed point and a constant gradient
    gives a unit-magnitude step.
    """
    bad = ~np.isfinite(grad)
    if bad.any():
        i = int(np.argmax(bad))
        fam, t, e = state.layout.locate(i)
        raise NonFiniteGradient(f"non-finite gradient in {fam}[t={t}, {e}]")
    free = ~state.frozen
    b1, b2 = config.beta1, config.beta2
    state.i += 1
    i = state.i
    m, v = state.m1, state.m2
    m[free] = b1 * m[free] + (1 - b1) * grad[free]
    v[free] = b2 * v[free] + (1 - b2) * grad[free] ** 2
    mh = m[free] / (1 - b1 ** i)
    vh = v[free] / (1 - b2 ** i)
    a = np.array([alpha[g] for g in STEP_GROUPS])[state.layout.group[free]]
    step = a * (mh + np.sign(mh) * config.eps) / (np.sqrt(vh) + config.eps)
    x = state.x
    x[free] = np.clip(x[free] - step, state.lo[free], state.hi[free])


# ----------------------------------------------------------------------------
# the loop

TRACE_COLUMNS = ("iteration", "wall_clock", "z_ms", "z_ctg", "alpha", "eps", "beta_scale")


class Clock:
    """Schedule clock.

    ``mode="virtual"`` advances by ``1/rate`` seconds per Adam iteration,
    which keeps runs reproducible; ``mode="wall"`` reads real time.
    """

    def __init__(self, mode: str = "virtual", rate: float = 100.0, start: float = 0.0):
        if mode not in ("virtual", "wall"):
            raise ValueError(mode)
        self.mode, self.rate = mode, rate
        self.virtual = start
        self.t_real0 = time.perf_counter() - start

    def now(self) -> float:
        if self.mode == "wall":
            return time.perf_counter() - self.t_real0
        return self.virtual

    def tick(self) -> None:
        self.virtual += 1.0 / self.rate

    def set(self, t: float) -> None:
        self.virtual = max(self.virtual, t)

    def real_elapsed(self) -> float:
        return time.perf_counter() - self.t_real0


@dataclass
class LoopResult:
    iterations: int
    trace: list


def run_adam_loop(state: FlatState, model, ctg, t_start: float, t_stop: float,
                  t0: float, tf: float, adam: AdamConfig | None = None,
                  hom: HomotopyConfig | None = None, clock: Clock | None = None,
                  max_iter: int | None = None, real_deadline: float | None = None,
                  trace: list | None = None) -> LoopResult:
    """Run Adam from ``t_start`` until the clock reaches ``t_stop``.

    The schedules are sampled once per iteration on the global window
    ``[t0, tf]``.  ``real_deadline`` (seconds since the clock was created)
    stops the loop early as a guard on wall time.
    """
    adam = adam or AdamConfig()
    hom = hom or HomotopyConfig()
    clock = clock or Clock(start=t_start)
    clock.set(t_start)
    trace = [] if trace is None else trace
    n = 0
    while clock.now() < t_stop and (max_iter is None or n < max_iter):
        if real_deadline is not None and clock.real_elapsed() > real_deadline:
            break
        sch = schedule_at(clock.now(), t0, tf, adam, hom)
        bd, g = model.evaluate(state.x, sch.shape, grad=True, ctg=ctg, iteration=state.i)
        adam_step(state, g, adam, sch.alpha)
        n += 1
        trace.append((state.i, clock.real_elapsed(), bd.z_ms, bd.z_ctg, sch.alpha["power"],
                      sch.shape.eps, sch.shape.beta))
        clock.tick()
        if not np.isfinite(bd.z_ms):
            break
    return LoopResult(n, trace)


def write_trace(trace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([row[0], f"{row[1]:.6f}"] + [repr(float(x)) for x in row[2:]])


def read_trace(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: not a trace file (expected columns {','.join(TRACE_COLUMNS)})")
    data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(TRACE_COLUMNS))
    return {c: data[:, k] for k, c in enumerate(TRACE_COLUMNS)}
