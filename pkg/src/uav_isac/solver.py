"""Log-barrier interior-point solver for the two convex subproblem shapes.

Both subproblems share the constraint families

    speed           (x_{n+1}-x_n)^2 + (y_{n+1}-y_n)^2 <= (delta V)^2
    deployment      (x_n - c_i)^2 + (y_n - c_i)^2 <= R_i^2
    assignment      0 <= a_{n,k} <= 1, rows summing to one
    crb surrogate   c_{m,s}(x, y) <= 0        ("throughput" problems)
                    c_{m,s}(x, y) <= u        ("feasibility" problems)

and are solved over z = (x, y, b, t) or (x, y, u), where b is the assignment
with its last column eliminated through the row-sum equality.  The barrier
uses exact gradients and Hessians of all constraint functions; the kinked
max() inside the pair bound keeps the Hessian of whichever branch is active.

Warm starts are expected feasible.  Constraints active at the warm start are
relaxed by a tiny margin (reported via SolveReport.max_violation) so the
barrier has a strictly interior starting point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import Assignment, SystemParams, Trajectory, UserSet
from .sca import ConstraintSurrogate, LocalPoint, ObjectiveSurrogate
from .sensing import DeploymentRegion

FEAS_TOL = 1e-8
#: margin used to push boundary-active warm starts strictly inside
ACTIVE_RELAX = 1e-9


class InfeasibleStart(ValueError):
    """Warm start violates the subproblem constraints beyond tolerance."""


class NumericalFailure(RuntimeError):
    """Barrier iterations stalled; `best` carries the best feasible report."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SolveReport:
    traj: Trajectory
    assign: Assignment | None
    objective: float
    max_violation: float
    iterations: int
    converged: bool

    @property
    def point(self):
        return self.traj, self.assign


@dataclass
class ConvexSubproblem:
    """One convex step: either a (max min-throughput) or a (min max-c) problem."""

    kind: str                    # "throughput" | "feasibility"
    params: SystemParams
    region: DeploymentRegion
    crb: list                    # ConstraintSurrogate instances
    objective: ObjectiveSurrogate | None = None
    users: UserSet | None = None
    optimize_trajectory: bool = True

    def __post_init__(self):
        if self.kind not in ("throughput", "feasibility"):
            raise ValueError(f"unknown subproblem kind {self.kind!r}")
        if self.kind == "throughput" and self.objective is None:
            raise ValueError("throughput subproblem needs an objective surrogate")


# ---------------------------------------------------------------------------
# flattened constraint workspace
# ---------------------------------------------------------------------------

# Hessians of the two pair quadratics, in (X1, X2, Y1, Y2) coordinates
_K4 = np.array([[1., 0., 0., 1.],
                [0., 1., 0., 0.],
                [0., 0., 1., 0.],
                [1., 0., 0., 1.]])
_K5 = np.array([[1., 0., 0., 0.],
                [0., 1., 1., 0.],
                [0., 1., 1., 0.],
                [0., 0., 0., 1.]])


class _Engine:
    """Evaluates constraint values / gradients / weighted Hessians at z."""

    def __init__(self, prob: ConvexSubproblem, n_users: int):
        p = self.params = prob.params
        self.kind = prob.kind
        self.opt_xy = prob.optimize_trajectory
        N = self.N = p.N
        self.K = n_users
        self.Kb = (n_users - 1) if prob.kind == "throughput" else 0

        # variable layout: [x (N), y (N), b (N*Kb), t|u (1 or 0)]
        self.nxy = 2 * N if self.opt_xy else 0
        self.off_b = self.nxy
        self.n_b = N * self.Kb if prob.kind == "throughput" else 0
        self.has_scalar = (prob.kind == "feasibility") or (prob.kind == "throughput")
        self.off_t = self.off_b + self.n_b
        self.n_z = self.off_t + 1

        self.obj = prob.objective
        self.nxt = np.roll(np.arange(N), -1)
        dv = p.delta * p.V
        self.speed_limit = dv * dv
        self.disc_centers = np.array([c for c, _ in prob.region.constraints])
        self.disc_radii = np.array([max(r, 1e-7) for _, r in prob.region.constraints])

        # flatten CRB surrogates
        self.xi_l = p.xi_l
        slots, ax, ay, phi0, B1, B2, cid_s, sx_s, sy_s = [], [], [], [], [], [], [], [], []
        pi, pj, E1, E2, E3, E4, h4r, h5r, g4, g5, z_r, cid_p = ([] for _ in range(12))
        sx_p, sy_p = [], []
        self.n_crb = len(prob.crb)
        for c_id, sur in enumerate(prob.crb):
            L = sur.idx.size
            slots.append(sur.idx)
            ax.append(sur.ax); ay.append(sur.ay); phi0.append(sur.phi0)
            B1.append(sur.B1); B2.append(sur.B2)
            cid_s.append(np.full(L, c_id))
            sx_s.append(np.full(L, sur.s[0])); sy_s.append(np.full(L, sur.s[1]))
            P = sur.slot_i.size
            if P:
                pi.append(sur.slot_i); pj.append(sur.slot_j)
                E1.append(sur.E1); E2.append(sur.E2); E3.append(sur.E3); E4.append(sur.E4)
                h4r.append(sur.h4_r); h5r.append(sur.h5_r)
                g4.append(sur.g4); g5.append(sur.g5); z_r.append(sur.z_r)
                cid_p.append(np.full(P, c_id))
                sx_p.append(np.full(P, sur.s[0])); sy_p.append(np.full(P, sur.s[1]))
        cat = lambda parts, width=None: (
            np.concatenate(parts) if parts else
            np.zeros((0,) if width is None else (0, width)))
        self.f_slot = cat(slots).astype(int); self.f_ax = cat(ax); self.f_ay = cat(ay)
        self.f_phi0 = cat(phi0); self.f_B1 = cat(B1); self.f_B2 = cat(B2)
        self.f_cid = cat(cid_s).astype(int)
        self.f_sx = cat(sx_s); self.f_sy = cat(sy_s)
        self.p_i = cat(pi).astype(int); self.p_j = cat(pj).astype(int)
        self.p_E1 = cat(E1); self.p_E2 = cat(E2); self.p_E3 = cat(E3); self.p_E4 = cat(E4)
        self.p_h4r = cat(h4r); self.p_h5r = cat(h5r)
        self.p_g4 = cat(g4, 4); self.p_g5 = cat(g5, 4); self.p_zr = cat(z_r, 4)
        self.p_cid = cat(cid_p).astype(int)
        self.p_sx = cat(sx_p); self.p_sy = cat(sy_p)

        # constraint row layout
        n_disc = len(self.disc_radii)
        self.i_speed = np.arange(N) if self.opt_xy else np.arange(0)
        base = self.i_speed.size
        self.i_disc = base + np.arange(n_disc * N) if self.opt_xy else np.arange(0)
        base += self.i_disc.size
        if prob.kind == "throughput":
            self.i_box_lo = base + np.arange(N * self.K)
            base += N * self.K
            self.i_box_hi = base + np.arange(N * self.K)
            base += N * self.K
            self.i_epi = base + np.arange(self.K)
            base += self.K
        else:
            self.i_box_lo = self.i_box_hi = self.i_epi = np.arange(0)
        self.i_crb = base + np.arange(self.n_crb)
        self.n_cons = base + self.n_crb

    # -- variable packing ---------------------------------------------------

    def pack(self, traj, assign, scalar):
        parts = []
        if self.opt_xy:
            parts += [traj.x, traj.y]
        if self.n_b:
            parts.append(assign.a[:, :-1].ravel())
        parts.append([scalar])
        return np.concatenate(parts)

    def unpack(self, z, fixed_traj=None, clip=False):
        if self.opt_xy:
            x = z[:self.N]
            y = z[self.N:2 * self.N]
        else:
            x, y = fixed_traj.x, fixed_traj.y
        assign = None
        if self.n_b:
            b = z[self.off_b:self.off_b + self.n_b].reshape(self.N, self.Kb)
            a = np.empty((self.N, self.K))
            a[:, :-1] = b
            a[:, -1] = 1.0 - b.sum(axis=1)
            if clip:
                a = np.clip(a, 0.0, 1.0)
                a /= a.sum(axis=1, keepdims=True)
            assign = a
        return np.asarray(x, dtype=float), np.asarray(y, dtype=float), assign, float(z[self.off_t])

    def _xy(self, z, fixed_traj):
        if self.opt_xy:
            return z[:self.N], z[self.N:2 * self.N]
        return fixed_traj.x, fixed_traj.y

    # -- raw constraint values ----------------------------------------------

    def values(self, z, fixed_traj=None):
        """All constraint values g(z); (values, domain_ok)."""
        x, y = self._xy(z, fixed_traj)
        g = np.empty(self.n_cons)
        ok = True
        if self.opt_xy:
            dx = x[self.nxt] - x
            dy = y[self.nxt] - y
            g[self.i_speed] = dx**2 + dy**2 - self.speed_limit
            dc = ((x[None, :] - self.disc_centers[:, 0, None]) ** 2
                  + (y[None, :] - self.disc_centers[:, 1, None]) ** 2
                  - (self.disc_radii**2)[:, None])
            g[self.i_disc] = dc.ravel()
        if self.i_box_lo.size:
            _, _, a, t = self.unpack(z, fixed_traj)
            g[self.i_box_lo] = -a.ravel()
            g[self.i_box_hi] = a.ravel() - 1.0
            per_user = self._objective_per_user(x, y, a)
            g[self.i_epi] = t - per_user
        if self.n_crb:
            cvals, dom = self._crb_values(x, y)
            if self.kind == "feasibility":
                cvals = cvals - z[self.off_t]
            g[self.i_crb] = cvals
            ok = dom
        return g, ok

    def _objective_per_user(self, x, y, a):
        o = self.obj
        d2 = ((x[:, None] - o.users.w[None, :, 0]) ** 2
              + (y[:, None] - o.users.w[None, :, 1]) ** 2 + o.H**2)
        f = -o.qa * a**2 - o.qd * d2**2 + o.la * a
        return f.sum(axis=0)

    def _crb_values(self, x, y):
        phi = (self.f_ax * (x[self.f_slot] - self.f_sx)
               + self.f_ay * (y[self.f_slot] - self.f_sy) + self.f_phi0)
        if np.any(phi <= 0):
            return np.full(self.n_crb, np.inf), False
        u = x[self.f_slot] - self.f_sx
        v = y[self.f_slot] - self.f_sy
        d2 = u**2 + v**2 + self.params.H**2
        part = self.params.eta / phi**2 + 8.0 / phi + self.f_B1 * d2 + self.f_B2
        g1 = np.bincount(self.f_cid, weights=part, minlength=self.n_crb)
        if self.p_i.size:
            zp = self._pair_coords(x, y)
            g2 = np.bincount(self.p_cid, weights=self._pair_terms(zp)[0],
                             minlength=self.n_crb)
        else:
            g2 = 0.0
        return g1 - self.xi_l * g2, True

    def _pair_coords(self, x, y):
        return np.stack([x[self.p_i] - self.p_sx, x[self.p_j] - self.p_sx,
                         y[self.p_i] - self.p_sy, y[self.p_j] - self.p_sy], axis=-1)

    def _pair_terms(self, zp):
        """Values and intermediates of the concave pair bound."""
        X1, X2, Y1, Y2 = zp[:, 0], zp[:, 1], zp[:, 2], zp[:, 3]
        h4 = 0.5 * ((X1 + Y2) ** 2 + X2**2 + Y1**2)
        h5 = 0.5 * (X1**2 + Y2**2 + (X2 + Y1) ** 2)
        dz = zp - self.p_zr
        t4 = (dz * self.p_g4).sum(axis=1) + self.p_h4r
        t5 = (dz * self.p_g5).sum(axis=1) + self.p_h5r
        b1 = h4 - t5
        b2 = h5 - t4
        M = np.maximum(b1, b2)
        psi_til = (4 * self.p_h4r * t4 - 2 * self.p_h4r**2
                   + 4 * self.p_h5r * t5 - 2 * self.p_h5r**2 - (h4 + h5) ** 2)
        H2 = self.params.H**2
        lin = self.p_E1 * (X1**2 + Y1**2 + H2) + self.p_E2 * (X2**2 + Y2**2 + H2)
        vals = (-0.5 * self.p_E4 * lin**2 - M**4 / (2 * self.p_E4)
                + self.p_E3 * psi_til)
        return vals, (h4, h5, b1, b2, M, lin)

    # -- gradients and Hessian ------------------------------------------------

    def derivatives(self, z, fixed_traj=None):
        """(values, G, hess_fn) with hess_fn(weights) -> curvature matrix."""
        g, ok = self.values(z, fixed_traj)
        if not ok:
            raise FloatingPointError("derivatives requested outside barrier domain")
        x, y = self._xy(z, fixed_traj)
        N = self.N
        G = np.zeros((self.n_cons, self.n_z))
        hess_parts = []

        if self.opt_xy:
            dx = x[self.nxt] - x
            dy = y[self.nxt] - y
            rows = self.i_speed
            idx = np.arange(N)
            nxt = self.nxt
            np.add.at(G, (rows, idx), -2 * dx)
            np.add.at(G, (rows, nxt), 2 * dx)
            np.add.at(G, (rows, N + idx), -2 * dy)
            np.add.at(G, (rows, N + nxt), 2 * dy)

            n_disc = len(self.disc_radii)
            for i in range(n_disc):
                rows = self.i_disc[i * N:(i + 1) * N]
                G[rows, idx] = 2 * (x - self.disc_centers[i, 0])
                G[rows, N + idx] = 2 * (y - self.disc_centers[i, 1])

        if self.i_box_lo.size:
            _, _, a, t = self.unpack(z, fixed_traj)
            # d a_{n,k} / d b_{n,j}: identity for k<Kb, -1 row for the last user
            for k in range(self.K):
                rows_lo = self.i_box_lo[k::self.K]
                rows_hi = self.i_box_hi[k::self.K]
                if k < self.Kb:
                    cols = self.off_b + np.arange(N) * self.Kb + k
                    G[rows_lo, cols] = -1.0
                    G[rows_hi, cols] = 1.0
                else:
                    for j in range(self.Kb):
                        cols = self.off_b + np.arange(N) * self.Kb + j
                        G[rows_lo, cols] = 1.0
                        G[rows_hi, cols] = -1.0
            o = self.obj
            d2 = ((x[:, None] - o.users.w[None, :, 0]) ** 2
                  + (y[:, None] - o.users.w[None, :, 1]) ** 2 + o.H**2)
            ux = x[:, None] - o.users.w[None, :, 0]
            uy = y[:, None] - o.users.w[None, :, 1]
            dfdx = -4 * o.qd * d2 * ux        # (N, K) -> d f_{n,k} / d x_n
            dfdy = -4 * o.qd * d2 * uy
            dfda = -2 * o.qa * a + o.la
            for k in range(self.K):
                row = self.i_epi[k]
                if self.opt_xy:
                    G[row, :N] = -dfdx[:, k]
                    G[row, N:2 * N] = -dfdy[:, k]
                if k < self.Kb:
                    cols = self.off_b + np.arange(N) * self.Kb + k
                    G[row, cols] = -dfda[:, k]
                else:
                    for j in range(self.Kb):
                        cols = self.off_b + np.arange(N) * self.Kb + j
                        G[row, cols] += dfda[:, k]
                G[row, self.off_t] = 1.0
            hess_parts.append(("epi", (d2, ux, uy)))

        if self.kind == "feasibility" and self.n_crb:
            G[self.i_crb, self.off_t] = -1.0

        crb_cache = None
        if self.n_crb and self.opt_xy:
            phi = (self.f_ax * (x[self.f_slot] - self.f_sx)
                   + self.f_ay * (y[self.f_slot] - self.f_sy) + self.f_phi0)
            u = x[self.f_slot] - self.f_sx
            v = y[self.f_slot] - self.f_sy
            dphi = -2 * self.params.eta / phi**3 - 8.0 / phi**2
            gx_s = dphi * self.f_ax + 2 * self.f_B1 * u
            gy_s = dphi * self.f_ay + 2 * self.f_B1 * v
            rows = self.i_crb[self.f_cid]
            np.add.at(G, (rows, self.f_slot), gx_s)
            np.add.at(G, (rows, N + self.f_slot), gy_s)
            pair_cache = None
            if self.p_i.size:
                zp = self._pair_coords(x, y)
                _, (h4, h5, b1, b2, M, lin) = self._pair_terms(zp)
                gh4 = np.stack([zp[:, 0] + zp[:, 3], zp[:, 1], zp[:, 2],
                                zp[:, 0] + zp[:, 3]], axis=-1)
                gh5 = np.stack([zp[:, 0], zp[:, 1] + zp[:, 2], zp[:, 1] + zp[:, 2],
                                zp[:, 3]], axis=-1)
                glin = np.stack([2 * self.p_E1 * zp[:, 0], 2 * self.p_E2 * zp[:, 1],
                                 2 * self.p_E1 * zp[:, 2], 2 * self.p_E2 * zp[:, 3]],
                                axis=-1)
                act1 = (b1 >= b2)[:, None]
                gM = np.where(act1, gh4 - self.p_g5, gh5 - self.p_g4)
                gtil = (4 * self.p_h4r[:, None] * self.p_g4
                        + 4 * self.p_h5r[:, None] * self.p_g5
                        - 2 * (h4 + h5)[:, None] * (gh4 + gh5))
                gpair = -self.xi_l * (-self.p_E4[:, None] * lin[:, None] * glin
                                      - (2 * M**3 / self.p_E4)[:, None] * gM
                                      + self.p_E3[:, None] * gtil)
                prow = self.i_crb[self.p_cid]
                np.add.at(G, (prow, self.p_i), gpair[:, 0])
                np.add.at(G, (prow, self.p_j), gpair[:, 1])
                np.add.at(G, (prow, N + self.p_i), gpair[:, 2])
                np.add.at(G, (prow, N + self.p_j), gpair[:, 3])
                pair_cache = (zp, h4, h5, M, lin, gh4, gh5, glin, gM, act1)
            crb_cache = (phi, dphi, pair_cache)

        def hess(weights):
            H = np.zeros((self.n_z, self.n_z))
            if self.opt_xy:
                idx = np.arange(N)
                w = weights[self.i_speed]
                for (r, c, sgn) in ((idx, idx, 1.0), (self.nxt, self.nxt, 1.0),
                                    (idx, self.nxt, -1.0), (self.nxt, idx, -1.0)):
                    np.add.at(H, (r, c), 2 * sgn * w)
                    np.add.at(H, (N + r, N + c), 2 * sgn * w)
                n_disc = len(self.disc_radii)
                wd = weights[self.i_disc].reshape(n_disc, N).sum(axis=0)
                H[idx, idx] += 2 * wd
                H[N + idx, N + idx] += 2 * wd
            if self.i_box_lo.size:
                d2, ux, uy = dict(hess_parts)["epi"]
                o = self.obj
                we = weights[self.i_epi]
                # trajectory curvature of the epigraph rows
                if self.opt_xy:
                    hxx = (4 * o.qd * (d2 + 2 * ux**2) * we[None, :]).sum(axis=1)
                    hyy = (4 * o.qd * (d2 + 2 * uy**2) * we[None, :]).sum(axis=1)
                    hxy = (8 * o.qd * ux * uy * we[None, :]).sum(axis=1)
                    idx = np.arange(N)
                    H[idx, idx] += hxx
                    H[N + idx, N + idx] += hyy
                    H[idx, N + idx] += hxy
                    H[N + idx, idx] += hxy
                # assignment curvature: 2*qa per (n, k), mapped through b
                for k in range(self.K):
                    q = 2 * o.qa[:, k] * we[k]
                    if k < self.Kb:
                        cols = self.off_b + np.arange(N) * self.Kb + k
                        H[cols, cols] += q
                    else:
                        for j1 in range(self.Kb):
                            c1 = self.off_b + np.arange(N) * self.Kb + j1
                            for j2 in range(self.Kb):
                                c2 = self.off_b + np.arange(N) * self.Kb + j2
                                H[c1, c2] += q
            if crb_cache is not None:
                phi, dphi, pair_cache = crb_cache
                wf = weights[self.i_crb[self.f_cid]]
                curv = 6 * self.params.eta / phi**4 + 16.0 / phi**3
                cxx = wf * (curv * self.f_ax**2 + 2 * self.f_B1)
                cyy = wf * (curv * self.f_ay**2 + 2 * self.f_B1)
                cxy = wf * curv * self.f_ax * self.f_ay
                np.add.at(H, (self.f_slot, self.f_slot), cxx)
                np.add.at(H, (N + self.f_slot, N + self.f_slot), cyy)
                np.add.at(H, (self.f_slot, N + self.f_slot), cxy)
                np.add.at(H, (N + self.f_slot, self.f_slot), cxy)
                if pair_cache is not None:
                    zp, h4, h5, M, lin, gh4, gh5, glin, gM, act1 = pair_cache
                    wp = weights[self.i_crb[self.p_cid]] * self.xi_l
                    P = zp.shape[0]
                    Hp = np.zeros((P, 4, 4))
                    Hp += self.p_E4[:, None, None] * np.einsum("pa,pb->pab", glin, glin)
                    dlin = np.zeros((P, 4, 4))
                    dlin[:, 0, 0] = 2 * self.p_E1
                    dlin[:, 2, 2] = 2 * self.p_E1
                    dlin[:, 1, 1] = 2 * self.p_E2
                    dlin[:, 3, 3] = 2 * self.p_E2
                    Hp += (self.p_E4 * lin)[:, None, None] * dlin
                    Hp += (6 * M**2 / self.p_E4)[:, None, None] * np.einsum(
                        "pa,pb->pab", gM, gM)
                    Kact = np.where(act1[:, :, None], _K4[None], _K5[None])
                    Hp += (2 * M**3 / self.p_E4)[:, None, None] * Kact
                    gs = gh4 + gh5
                    Hp += 2 * self.p_E3[:, None, None] * (
                        np.einsum("pa,pb->pab", gs, gs)
                        + (h4 + h5)[:, None, None] * (_K4 + _K5)[None])
                    Hp *= wp[:, None, None]
                    cols = np.stack([self.p_i, self.p_j, N + self.p_i,
                                     N + self.p_j], axis=-1)
                    for aa in range(4):
                        for bb in range(4):
                            np.add.at(H, (cols[:, aa], cols[:, bb]), Hp[:, aa, bb])
            return H

        return g, G, hess


# ---------------------------------------------------------------------------
# barrier driver
# ---------------------------------------------------------------------------

def _newton_stage(engine, z, relax, kappa, e_obj, fixed_traj, max_iter=60):
    """Damped Newton on kappa * e.z + barrier; returns (z, n_iters, converged)."""
    for it in range(max_iter):
        g, G, hess = engine.derivatives(z, fixed_traj)
        slack = relax - g
        if np.any(slack <= 0):
            raise FloatingPointError("barrier iterate left the feasible region")
        w1 = 1.0 / slack
        grad = kappa * e_obj + G.T @ w1
        H = (G * (w1**2)[:, None]).T @ G + hess(w1)
        ridge = 0.0
        for _ in range(8):
            try:
                cho = scipy.linalg.cho_factor(
                    H + ridge * np.eye(engine.n_z), lower=True)
                step = -scipy.linalg.cho_solve(cho, grad)
                break
            except np.linalg.LinAlgError:
                ridge = max(1e-10 * np.abs(np.diag(H)).max(), ridge * 100 + 1e-12)
        else:
            return z, it, False
        lam2 = float(-grad @ step)
        if lam2 <= 2e-9 * (1 + abs(kappa * float(e_obj @ z))):
            return z, it, True
        # backtracking line search on the barrier merit
        merit0 = kappa * float(e_obj @ z) - float(np.log(slack).sum())
        alpha = 1.0
        for _ in range(60):
            z_try = z + alpha * step
            g_try, ok = engine.values(z_try, fixed_traj)
            if ok:
                s_try = relax - g_try
                if np.all(s_try > 0):
                    merit = kappa * float(e_obj @ z_try) - float(np.log(s_try).sum())
                    if merit <= merit0 - 1e-4 * alpha * lam2:
                        break
            alpha *= 0.5
        else:
            return z, it, True   # no admissible progress: accept current point
        z = z_try
    return z, max_iter, False


def _run_barrier(engine, z0, e_obj, relax, tol, fixed_traj):
    m = engine.n_cons
    kappa = 1.0
    # balance the initial objective force against the barrier gradient
    g, G, _ = engine.derivatives(z0, fixed_traj)
    bgrad = G.T @ (1.0 / (relax - g))
    scale = np.linalg.norm(bgrad) / max(np.linalg.norm(e_obj), 1e-12)
    kappa = max(min(scale, 1e8), 1e-4)
    z = z0
    total = 0
    for _ in range(40):
        z, its, _ = _newton_stage(engine, z, relax, kappa, e_obj, fixed_traj)
        total += its
        gap = m / kappa
        obj = float(e_obj @ z)
        if gap <= tol * (1.0 + abs(obj)):
            return z, total, True
        kappa *= 10.0
    return z, total, False


def solve(problem: ConvexSubproblem, warm_start: LocalPoint,
          tol: float = 1e-6) -> SolveReport:
    """Solve the convex subproblem from a feasible warm start.

    Raises InfeasibleStart when the warm start violates constraints beyond
    FEAS_TOL scaled by the constraint magnitudes, and NumericalFailure (with
    the warm-start report attached) when the barrier cannot make progress.
    """
    params = problem.params
    n_users = problem.objective.users.n_users if problem.objective else 1
    engine = _Engine(problem, n_users)
    traj0 = warm_start.traj
    assign0 = warm_start.assign

    if problem.kind == "throughput":
        if assign0 is None:
            raise InfeasibleStart("throughput subproblem needs a warm-start assignment")
        # nudge the assignment strictly inside the simplex
        a0 = assign0.a * (1 - 1e-12) + 1e-12 / n_users
        per0 = engine._objective_per_user(traj0.x, traj0.y, a0)
        t0 = float(per0.min()) - max(1e-3, 1e-3 * abs(per0.min()))
        z0 = engine.pack(traj0, Assignment(a0), t0)
    else:
        cvals, ok = engine._crb_values(traj0.x, traj0.y)
        if not ok:
            raise InfeasibleStart("warm start outside surrogate domain")
        top = float(cvals.max()) if cvals.size else 0.0
        u0 = top + max(1e-3, 1e-6 * abs(top))
        z0 = engine.pack(traj0, None, u0)

    g0, ok = engine.values(z0, traj0)
    if not ok:
        raise InfeasibleStart("warm start outside surrogate domain")
    scale = np.maximum(1.0, np.abs(g0))
    if np.any(g0 > FEAS_TOL * scale * 10):
        worst = float((g0 / scale).max())
        raise InfeasibleStart(f"warm start infeasible (scaled violation {worst:.3e})")
    relax = np.where(g0 > -ACTIVE_RELAX * scale, g0 + ACTIVE_RELAX * scale, 0.0)

    e_obj = np.zeros(engine.n_z)
    e_obj[engine.off_t] = -1.0 if problem.kind == "throughput" else 1.0

    def report_at(z, iterations, converged):
        x, y, a, _ = engine.unpack(z, traj0, clip=True)
        traj = Trajectory(x, y)
        assign = Assignment(a) if a is not None else None
        if problem.kind == "throughput":
            per = engine._objective_per_user(traj.x, traj.y, assign.a)
            objective = float(per.min())
        else:
            cvals, okv = engine._crb_values(traj.x, traj.y)
            objective = float(cvals.max()) if okv and cvals.size else np.inf
        gv, okv = engine.values(engine.pack(traj, assign,
                                            z[engine.off_t]), traj0)
        viol = float(np.maximum(gv, 0.0).max()) if okv else np.inf
        return SolveReport(traj=traj, assign=assign, objective=objective,
                           max_violation=viol, iterations=iterations,
                           converged=converged)

    warm_report = report_at(z0, 0, False)
    try:
        z, iters, converged = _run_barrier(engine, z0, e_obj, relax, tol, traj0)
    except FloatingPointError as exc:
        raise NumericalFailure(str(exc), best=warm_report) from exc

    result = report_at(z, iters, converged)
    if problem.kind == "throughput" and result.objective < warm_report.objective:
        # the barrier should never lose ground; fall back to the warm start
        return SolveReport(traj=warm_report.traj, assign=warm_report.assign,
                           objective=warm_report.objective,
                           max_violation=warm_report.max_violation,
                           iterations=iters, converged=False)
    return result
