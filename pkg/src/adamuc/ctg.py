"""DC contingency screening with one PCG solve per period plus rank-1 updates.

Post-outage angles come from the base solution by a Sherman-Morrison
correction, and the penalty gradient needs only one extra PCG solve per
period because the per-contingency adjoint systems are rank-1 updates of
the same base matrix.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .case import Case
from .linalg import IncompleteLDL, PcgError, pcg_solve
from .surplus import HARD, PenaltyShape, soft_relu

log = logging.getLogger(__name__)

ISLAND_TOL = 1e-10


def build_dc_matrices(case: Case):
    """Reduced incidence (branch x non-reference bus), 1/x and ``E^T Y_x E``."""
    a = case.arrays
    nb, nbr = a.nb, a.nbr
    keep = np.array([i for i in range(nb) if i != a.ref], dtype=int)
    col = -np.ones(nb, dtype=int)
    col[keep] = np.arange(keep.size)
    rows, cols, vals = [], [], []
    for j in range(nbr):
        for bus, sgn in ((a.br_fr[j], 1.0), (a.br_to[j], -1.0)):
            if col[bus] >= 0:
                rows.append(j)
                cols.append(col[bus])
                vals.append(sgn)
    E = sp.csr_matrix((vals, (rows, cols)), shape=(nbr, nb - 1))
    y = 1.0 / a.x
    Y = (E.T @ sp.diags(y) @ E).tocsr()
    if nb > 1:
        dense = Y.toarray()
        if np.linalg.matrix_rank(dense) < nb - 1:
            raise ValueError("network is disconnected: reduced admittance is singular")
    return E, y, Y


@dataclass
class CtgBlockResult:
    z_min: np.ndarray
    z_avg: np.ndarray
    g_pinj: np.ndarray | None = None
    g_phi: np.ndarray | None = None
    g_qfr: np.ndarray | None = None
    g_qto: np.ndarray | None = None


def score_contingency(p, qf, qt, s_max, d, c_s, shape: PenaltyShape = HARD, skip=None):
    """Overload penalty of one post-outage flow vector.

    Returns ``(z, overload, (dz/dp, dz/dqf, dz/dqt))`` where ``overload`` is
    ``max(s_fr, s_to) - s_max`` per branch.  ``skip`` masks the outaged branch.
    """
    sf = np.sqrt(p * p + qf * qf)
    st = np.sqrt(p * p + qt * qt)
    use_fr = sf >= st
    s = np.where(use_fr, sf, st)
    over = s - s_max
    val, dval = soft_relu(over, shape.eps)
    k = d * c_s * shape.beta
    if skip is not None:
        val = np.where(skip, 0.0, val)
        dval = np.where(skip, 0.0, dval)
    z = k * float(val.sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(s > 0, k * dval / np.where(s > 0, s, 1.0), 0.0)
    return z, over, (w * p, np.where(use_fr, w * qf, 0.0), np.where(use_fr, 0.0, w * qt))


class CtgWorkspace:
    """Topology-dependent data shared by every period and iteration."""

    def __init__(self, case: Case, fill: int | None = None, pcg_tol: float = 1e-10):
        a = case.arrays
        self.case = case
        self.nb, self.nbr, self.ref = a.nb, a.nbr, a.ref
        self.nonref = np.array([i for i in range(a.nb) if i != a.ref], dtype=int)
        self.E, self.y, self.Y = build_dc_matrices(case)
        self.ET = self.E.T.tocsr()
        self.pcg_tol = pcg_tol
        self.P = IncompleteLDL(self.Y, fill) if a.nb > 1 else None
        self.ctg_branch = a.ctg_branch.copy()
        nk = self.ctg_branch.size
        self.n_ctg = nk
        m = a.nb - 1
        self.U = np.zeros((m, nk))
        self.pcg_iters_setup = 0
        for k, j in enumerate(self.ctg_branch):
            e = self.E[j].toarray().ravel()
            self.U[:, k], it = self.solve(e)
            self.pcg_iters_setup += it
        EU = np.asarray(self.E @ self.U) if nk else np.zeros((a.nbr, 0))
        # a_k = e_k^T Y^{-1} e_k; outaged system is Y - y_k e_k e_k^T
        self.a_k = EU[self.ctg_branch, np.arange(nk)] if nk else np.zeros(0)
        self.den = 1.0 - self.y[self.ctg_branch] * self.a_k
        self.islanding = np.abs(self.den) < ISLAND_TOL
        for k in np.nonzero(self.islanding)[0]:
            log.warning("contingency %s islands the network; skipped", a.ctg_ids[k])
        safe = np.where(self.islanding, 1.0, self.den)
        self.gamma = self.y[self.ctg_branch] / safe
        self.W = -self.U * self.gamma  # w_k columns: theta_k = theta_b - u_k (w_k^T c)
        self.G = self.y[:, None] * EU  # flow change per unit of the correction scalar

    def solve(self, rhs):
        """``Y^{-1} rhs`` by PCG; returns (x, iterations)."""
        return pcg_solve(self.Y, rhs, self.P, self.pcg_tol)

    def smw_correct(self, theta_b, k, c, b_k: float = 0.0):
        """Angles after outage ``k`` from the base solution of ``Y theta = c``.

        ``b_k`` is the outaged branch's phase-shift term, which leaves the
        right-hand side together with the branch.
        """
        if self.islanding[k]:
            raise ValueError(f"contingency {k} islands the network")
        u = self.U[:, k]
        return theta_b - u * (self.W[:, k] @ c) + u * (b_k / self.den[k])


class CtgEngine:
    """Per-iteration contingency evaluation with worst-set tracking.

    ``top_frac`` of contingencies (at least one) form the worst set K_t;
    ``random_frac`` more (at least one) are drawn uniformly from the rest.
    ``full=True`` evaluates every contingency every time.
    """

    def __init__(self, case: Case, workspace: CtgWorkspace | None = None, seed: int = 0,
                 top_frac: float = 0.10, random_frac: float = 0.05, window: int = 10,
                 zeta: float = 0.0, full: bool = False, fill: int | None = None,
                 pcg_tol: float = 1e-10):
        a = case.arrays
        self.case = case
        self.ws = workspace if workspace is not None else CtgWorkspace(case, fill, pcg_tol)
        self.n_ctg = self.ws.n_ctg
        self.T = a.T
        self.d = a.d
        self.c_s = a.c_s
        self.s_ctg = a.s_max_ctg
        self.seed = seed
        self.top_frac, self.random_frac = top_frac, random_frac
        self.window = window
        self.zeta = zeta
        self.full = full
        nk = self.n_ctg
        self.history = np.full((self.T, nk, window), -np.inf)
        self.seen = np.zeros(self.T, dtype=bool)
        self.worst = [np.zeros(0, dtype=int) for _ in range(self.T)]
        self.random = [np.zeros(0, dtype=int) for _ in range(self.T)]
        self.last_z = np.zeros((self.T, nk))
        self.pcg_iters = np.zeros(self.T, dtype=int)
        valid = ~self.ws.islanding
        self.valid = np.nonzero(valid)[0]

    # -- selection -----------------------------------------------------------
    @property
    def n_top(self) -> int:
        return max(1, int(np.ceil(self.top_frac * self.valid.size))) if self.valid.size else 0

    @property
    def n_random(self) -> int:
        return max(1, int(np.ceil(self.random_frac * self.valid.size))) if self.valid.size else 0

    def severity(self, t: int) -> np.ndarray:
        return self.history[t].max(axis=1)

    def select(self, t: int, iteration: int) -> np.ndarray:
        if self.full or not self.seen[t]:
            return self.valid.copy()
        K = self.worst[t]
        rest = np.setdiff1d(self.valid, K)
        rng = np.random.default_rng([self.seed, iteration, t])
        S = np.sort(rng.choice(rest, min(self.n_random, rest.size), replace=False)) \
            if rest.size else np.zeros(0, dtype=int)
        self.random[t] = S
        return np.union1d(K, S)

    def _record(self, t, ks, z):
        slot = self.history[t]
        slot[ks] = np.roll(slot[ks], 1, axis=1)
        slot[ks, 0] = z
        self.seen[t] = True
        sev = self.severity(t)[self.valid]
        order = np.argsort(-sev, kind="stable")
        self.worst[t] = np.sort(self.valid[order[: self.n_top]])

    # -- evaluation ----------------------------------------------------------
    def angles(self, p_inj, phi):
        """Base angles, right-hand side and phase terms for one period."""
        ws = self.ws
        pt = p_inj - p_inj.mean()
        b = -ws.y * phi
        c = pt[ws.nonref] - ws.ET @ b
        theta, it = ws.solve(c)
        return theta, c, b, it

    def flows_after(self, theta_b, b, ks):
        """Post-outage DC flows, shape ``(len(ks), n_branch)``, outaged entry zeroed."""
        ws = self.ws
        f_b = ws.y * (ws.E @ theta_b) + b
        j = ws.ctg_branch[ks]
        sig = (ws.gamma[ks] * (ws.E @ theta_b)[j] + b[j] / ws.den[ks])
        F = f_b[None, :] + sig[:, None] * ws.G[:, ks].T
        F[np.arange(len(ks)), j] = 0.0
        return F

    def block(self, t0, t1, inj_p, phi, qf, qt, shape: PenaltyShape, grad: bool, iteration: int,
              update: bool = True):
        Tb = t1 - t0
        res = CtgBlockResult(np.zeros(Tb), np.zeros(Tb))
        if grad:
            res.g_pinj = np.zeros_like(inj_p)
            res.g_phi = np.zeros_like(phi)
            res.g_qfr = np.zeros_like(qf)
            res.g_qto = np.zeros_like(qt)
        for r in range(Tb):
            t = t0 + r
            out = self.period(t, inj_p[r], phi[r], qf[r], qt[r], shape, grad, iteration, update)
            res.z_min[r], res.z_avg[r] = out[0], out[1]
            if grad:
                res.g_pinj[r], res.g_phi[r], res.g_qfr[r], res.g_qto[r] = out[2]
        return res

    def period(self, t, p_inj, phi, qf, qt, shape, grad, iteration, update=True):
        """Evaluate period ``t``; returns (z_worst, z_mean, gradients or None).

        ``update=False`` leaves the severity history and worst sets untouched.
        """
        ws = self.ws
        ks = self.select(t, iteration)
        if ks.size == 0:
            zero = (np.zeros_like(p_inj), np.zeros_like(phi), np.zeros_like(qf), np.zeros_like(qt))
            return 0.0, 0.0, zero if grad else None
        try:
            theta, c, b, it = self.angles(p_inj, phi)
        except PcgError as exc:
            raise PcgError(f"period {t} base solve: {exc}", exc.x, exc.residual) from None
        F = self.flows_after(theta, b, ks)
        d = self.d[t]
        z = np.zeros(ks.size)
        grads = []
        for n, k in enumerate(ks):
            skip = np.zeros(ws.nbr, dtype=bool)
            skip[ws.ctg_branch[k]] = True
            z[n], _, gk = score_contingency(F[n], qf, qt, self.s_ctg, d, self.c_s, shape, skip)
            grads.append(gk)
        if update:
            self.last_z[t, ks] = z
            self._record(t, ks, z)
        worst = int(np.argmax(z))
        z_min, z_avg = float(z[worst]), float(z.sum() / self.n_ctg)
        if not grad:
            return z_min, z_avg, None

        weight = np.full(ks.size, 1.0 / self.n_ctg)
        weight[worst] += 1.0
        active = z > self.zeta
        g_q_fr = np.zeros_like(qf)
        g_q_to = np.zeros_like(qt)
        D_sum = np.zeros(ws.nbr)
        r_sum = np.zeros(ws.nb - 1)
        corr = np.zeros(ws.nb - 1)
        back_k = np.zeros(ws.nbr)
        for n, k in enumerate(ks):
            if not active[n]:
                continue
            gp, gf, gt = grads[n]
            Dk = weight[n] * gp
            g_q_fr += weight[n] * gf
            g_q_to += weight[n] * gt
            D_sum += Dk
            rk = ws.ET @ (ws.y * Dk)
            r_sum += rk
            urk = ws.U[:, k] @ rk
            corr += (ws.gamma[k] * urk) * ws.U[:, k]
            # the outaged branch's own phase term drops out of its system
            back_k[ws.ctg_branch[k]] += urk / ws.den[k]
        if not np.any(active):
            zero = (np.zeros_like(p_inj), np.zeros_like(phi), g_q_fr, g_q_to)
            return z_min, z_avg, zero
        eta_b, it2 = ws.solve(r_sum)
        self.pcg_iters[t] = it + it2
        eta = eta_b + corr
        full = np.zeros(ws.nb)
        full[ws.nonref] = eta
        g_inj = slack_corrected(full)
        g_b = D_sum - ws.E @ eta + back_k
        g_phi = -ws.y * g_b
        return z_min, z_avg, (g_inj, g_phi, g_q_fr, g_q_to)

    def diagnostics(self) -> dict:
        ids = self.case.arrays.ctg_ids
        return {
            "worst": [[ids[k] for k in K] for K in self.worst],
            "severity": [[float(s) if np.isfinite(s) else None for s in self.severity(t)]
                         for t in range(self.T)],
            "pcg_iterations": self.pcg_iters.tolist(),
        }

    def reset_selection(self):
        self.history[:] = -np.inf
        self.seen[:] = False


def backprop_contingency(engine: CtgEngine, t: int, p_inj, phi, qf, qt,
                         shape: PenaltyShape = HARD, iteration: int = 0):
    """Gradients of period ``t``'s contingency penalty.

    Returns (d/dp_inj with the uniform-slack correction, d/dphi, d/dq_fr, d/dq_to).
    """
    return engine.period(t, p_inj, phi, qf, qt, shape, True, iteration)[2]


def slack_corrected(eta: np.ndarray) -> np.ndarray:
    """Remove the mean: the gradient under uniform redistribution of a perturbation."""
    eta = np.asarray(eta, dtype=float)
    if eta.size == 0:
        return eta.copy()
    out = eta - math.fsum(eta) / eta.size
    # the subtraction rounds; moving the leftover onto the smallest entry makes
    # the exact sum vanish down to that entry's ulp
    for _ in range(2):
        r = math.fsum(out)
        if r == 0.0:
            break
        j = int(np.argmin(np.abs(out)))
        out[j] -= r
    return out
