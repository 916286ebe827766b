"""Per-iteration convex surrogates for the throughput objective and CRB constraint.

Every surrogate is built at a local point (x_r, y_r, a_r), equals its exact
counterpart there, and bounds it from the safe side everywhere else:

* objective surrogate f_{n,k}  <=  a_{n,k} * delta * R_{n,k}   (concave)
* g1  >=  Theta_a + Theta_b    where its affine distance minorant is positive
  (jointly convex in the waypoints)
* g2  <=  Theta_a*Theta_b - Theta_c^2                          (concave)

so c = g1 - xi_l * g2 <= 0 certifies the exact CRB constraint at (m, s).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Assignment, SystemParams, Trajectory, UserSet, squared_distances

#: pairs whose cross term vanishes at the local point carry no information
#: about the determinant; their bound degenerates and they are dropped
#: (their exact contribution h2 * psi >= 0 is replaced by the trivial bound 0).
PSI_DEGENERATE_TOL = 1e-12


class DomainError(ArithmeticError):
    """Surrogate evaluated outside the positivity region of its distance minorant."""


@dataclass(frozen=True)
class LocalPoint:
    """Expansion point (trajectory and, for the objective, assignment)."""

    traj: Trajectory
    assign: Assignment | None = None

    def d2(self, p, H: float) -> np.ndarray:
        return squared_distances(self.traj, p, H)


# ---------------------------------------------------------------------------
# objective surrogate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectiveSurrogate:
    """Concave minorant of the per-(slot, user) throughput terms.

    f_{n,k}(x, y, a) = -qa * a^2 - qd * d^4 + la * a with d the distance to
    user k in slot n.  For slots with zero local assignment share the
    quadratic split degenerates and the term falls back to the linear-in-a
    bound frozen at the local distance (qa = qd = 0).
    """

    users: UserSet
    H: float
    qa: np.ndarray      # (N, K)
    qd: np.ndarray      # (N, K)
    la: np.ndarray      # (N, K)
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray

    @property
    def shape(self):
        return self.qa.shape

    def _d2_matrix(self, traj: Trajectory) -> np.ndarray:
        return np.stack([squared_distances(traj, w, self.H)
                         for w in self.users.w], axis=1)

    def f_values(self, traj: Trajectory, assign: Assignment) -> np.ndarray:
        """Surrogate throughput contribution per (slot, user)."""
        a = assign.a
        d2 = self._d2_matrix(traj)
        return -self.qa * a**2 - self.qd * d2**2 + self.la * a

    def per_user(self, traj: Trajectory, assign: Assignment) -> np.ndarray:
        return self.f_values(traj, assign).sum(axis=0)

    def min_value(self, traj: Trajectory, assign: Assignment) -> float:
        return float(self.per_user(traj, assign).min())

    def gradients(self, traj: Trajectory, assign: Assignment):
        """Gradients of the per-user sums.

        Returns (gx, gy, ga): gx[k, n] = d(sum_n f_{n,k})/dx_n, same for y;
        ga[n, k] = df_{n,k}/da_{n,k} (cross-user entries are structurally 0).
        """
        a = assign.a
        d2 = self._d2_matrix(traj)
        dx = traj.x[:, None] - self.users.w[None, :, 0]
        dy = traj.y[:, None] - self.users.w[None, :, 1]
        gx = (-4.0 * self.qd * d2 * dx).T
        gy = (-4.0 * self.qd * d2 * dy).T
        ga = -2.0 * self.qa * a + self.la
        return gx, gy, ga


def build_objective_surrogate(local: LocalPoint, users: UserSet,
                              params: SystemParams) -> ObjectiveSurrogate:
    if local.assign is None:
        raise ValueError("objective surrogate needs an assignment at the local point")
    rho = params.snr_factor
    delta = params.delta
    d2r = np.stack([local.d2(w, params.H) for w in users.w], axis=1)   # (N, K)
    a_r = local.assign.a
    A1 = delta * rho / (np.log(2.0) * d2r * (d2r + rho))
    A2 = delta * np.log2(1.0 + rho / d2r) + A1 * d2r
    A3 = a_r / d2r

    qa = np.zeros_like(A1)
    qd = np.zeros_like(A1)
    la = np.empty_like(A1)
    live = A3 > 0
    qa[live] = A1[live] / (2.0 * A3[live])
    qd[live] = A1[live] * A3[live] / 2.0
    la[live] = A2[live]
    # zero local share: keep the tangent bound linear in a, distance frozen
    la[~live] = A2[~live] - A1[~live] * d2r[~live]
    return ObjectiveSurrogate(users=users, H=params.H, qa=qa, qd=qd, la=la,
                              A1=A1, A2=A2, A3=A3)


def eval_objective_surrogate(sur: ObjectiveSurrogate, traj: Trajectory,
                             assign: Assignment):
    """Convenience evaluation: per-user sums, their min, and gradients."""
    per_user = sur.per_user(traj, assign)
    return per_user, float(per_user.min()), sur.gradients(traj, assign)


# ---------------------------------------------------------------------------
# cross-term bounds (the pair lemma)
# ---------------------------------------------------------------------------

def _h4(z):
    x1, x2, y1, y2 = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    return 0.5 * ((x1 + y2) ** 2 + x2**2 + y1**2)


def _h5(z):
    x1, x2, y1, y2 = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    return 0.5 * (x1**2 + y2**2 + (x2 + y1) ** 2)


def _grad_h4(z):
    x1, x2, y1, y2 = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    return np.stack([x1 + y2, x2, y1, x1 + y2], axis=-1)


def _grad_h5(z):
    x1, x2, y1, y2 = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    return np.stack([x1, x2 + y1, x2 + y1, y2], axis=-1)


class PsiTilde:
    """Concave lower bound of the squared cross product (x1*y2 - x2*y1)^2."""

    def __init__(self, z_r):
        self.z_r = np.asarray(z_r, dtype=float)
        self.h4_r = float(_h4(self.z_r))
        self.h5_r = float(_h5(self.z_r))
        self.g4 = _grad_h4(self.z_r)
        self.g5 = _grad_h5(self.z_r)

    def taylor_h4(self, z):
        return (np.asarray(z) - self.z_r) @ self.g4 + self.h4_r

    def taylor_h5(self, z):
        return (np.asarray(z) - self.z_r) @ self.g5 + self.h5_r

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return (4.0 * self.h4_r * self.taylor_h4(z) - 2.0 * self.h4_r**2
                + 4.0 * self.h5_r * self.taylor_h5(z) - 2.0 * self.h5_r**2
                - (_h4(z) + _h5(z)) ** 2)

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        s = _h4(z) + _h5(z)
        return (4.0 * self.h4_r * self.g4 + 4.0 * self.h5_r * self.g5
                - 2.0 * s[..., None] * (_grad_h4(z) + _grad_h5(z)))


class PsiHat:
    """Convex upper bound of the squared cross product, tight at the local point."""

    def __init__(self, z_r):
        self.z_r = np.asarray(z_r, dtype=float)
        self.h4_r = float(_h4(self.z_r))
        self.h5_r = float(_h5(self.z_r))
        self.g4 = _grad_h4(self.z_r)
        self.g5 = _grad_h5(self.z_r)

    def branches(self, z):
        z = np.asarray(z, dtype=float)
        t4 = (z - self.z_r) @ self.g4 + self.h4_r
        t5 = (z - self.z_r) @ self.g5 + self.h5_r
        return _h4(z) - t5, _h5(z) - t4

    def __call__(self, z):
        b1, b2 = self.branches(z)
        return np.maximum(b1, b2) ** 2

    def gradient(self, z):
        """A subgradient; at the branch tie the first branch is used."""
        z = np.asarray(z, dtype=float)
        b1, b2 = self.branches(z)
        m = np.maximum(b1, b2)
        g = np.where((b1 >= b2)[..., None], _grad_h4(z) - self.g5,
                     _grad_h5(z) - self.g4)
        return 2.0 * m[..., None] * g


def lemma2_bounds(z_r):
    """Bound pair for psi at local pair coordinates z_r = (x1, x2, y1, y2)."""
    return PsiTilde(z_r), PsiHat(z_r)


# ---------------------------------------------------------------------------
# CRB constraint surrogate for one (window start, target) pair
# ---------------------------------------------------------------------------

def _h2(t1, t2, eta):
    return (eta**2 / (t1**3 * t2**3) + 8 * eta / (t1**3 * t2**2)
            + 8 * eta / (t1**2 * t2**3) + 64 / (t1**2 * t2**2))


@dataclass
class ConstraintSurrogate:
    """Convex model c(x, y) = g1 - xi_l * g2 for one (m, s) pair.

    All constants are frozen at the local trajectory.  Values and gradients
    are plain numpy; gradients are length-N arrays, zero outside the window.
    """

    m: int
    s: np.ndarray
    xi_l: float
    eta: float
    H: float
    idx: np.ndarray         # (L,) slot indices of the window
    # g1 data, per window slot
    ax: np.ndarray          # (L,) affine minorant x-coefficient 2*(x_r - s_x)
    ay: np.ndarray
    phi0: np.ndarray        # (L,) constant 2H^2 - d_r^2
    B1: np.ndarray
    B2: np.ndarray
    # pair data (degenerate pairs already dropped), flattened over n1 < n2
    slot_i: np.ndarray      # (P,)
    slot_j: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E3: np.ndarray
    E4: np.ndarray
    h4_r: np.ndarray
    h5_r: np.ndarray
    g4: np.ndarray          # (P, 4) Taylor gradient of h4 at the local pair point
    g5: np.ndarray
    z_r: np.ndarray         # (P, 4) local pair coordinates
    n_dropped: int = 0
    c_local: float = field(default=np.nan)

    # -- helpers ----------------------------------------------------------

    def _phi(self, traj: Trajectory) -> np.ndarray:
        return (self.ax * (traj.x[self.idx] - self.s[0])
                + self.ay * (traj.y[self.idx] - self.s[1]) + self.phi0)

    def _pair_coords(self, traj: Trajectory) -> np.ndarray:
        return np.stack([traj.x[self.slot_i] - self.s[0],
                         traj.x[self.slot_j] - self.s[0],
                         traj.y[self.slot_i] - self.s[1],
                         traj.y[self.slot_j] - self.s[1]], axis=-1)

    # -- g1 ----------------------------------------------------------------

    def g1_value(self, traj: Trajectory) -> float:
        phi = self._phi(traj)
        if np.any(phi <= 0):
            raise DomainError(f"affine distance minorant nonpositive in window {self.m}")
        u = traj.x[self.idx] - self.s[0]
        v = traj.y[self.idx] - self.s[1]
        d2 = u**2 + v**2 + self.H**2
        return float(np.sum(self.eta / phi**2 + 8.0 / phi + self.B1 * d2 + self.B2))

    def g1_gradient(self, traj: Trajectory):
        phi = self._phi(traj)
        if np.any(phi <= 0):
            raise DomainError(f"affine distance minorant nonpositive in window {self.m}")
        u = traj.x[self.idx] - self.s[0]
        v = traj.y[self.idx] - self.s[1]
        dphi = -2.0 * self.eta / phi**3 - 8.0 / phi**2
        gx_w = dphi * self.ax + 2.0 * self.B1 * u
        gy_w = dphi * self.ay + 2.0 * self.B1 * v
        gx = np.zeros(traj.n_slots)
        gy = np.zeros(traj.n_slots)
        np.add.at(gx, self.idx, gx_w)
        np.add.at(gy, self.idx, gy_w)
        return gx, gy

    # -- g2 ----------------------------------------------------------------

    def _pair_values(self, z):
        """Per-pair concave bound terms at pair coordinates z of shape (P, 4)."""
        h4 = _h4(z)
        h5 = _h5(z)
        t4 = ((z - self.z_r) * self.g4).sum(axis=-1) + self.h4_r
        t5 = ((z - self.z_r) * self.g5).sum(axis=-1) + self.h5_r
        psi_til = (4 * self.h4_r * t4 - 2 * self.h4_r**2
                   + 4 * self.h5_r * t5 - 2 * self.h5_r**2 - (h4 + h5) ** 2)
        M = np.maximum(h4 - t5, h5 - t4)
        t1 = z[:, 0] ** 2 + z[:, 2] ** 2 + self.H**2
        t2 = z[:, 1] ** 2 + z[:, 3] ** 2 + self.H**2
        lin = self.E1 * t1 + self.E2 * t2
        return (-0.5 * self.E4 * lin**2 - M**4 / (2.0 * self.E4)
                + self.E3 * psi_til)

    def g2_value(self, traj: Trajectory) -> float:
        if self.slot_i.size == 0:
            return 0.0
        return float(self._pair_values(self._pair_coords(traj)).sum())

    def g2_gradient(self, traj: Trajectory):
        gx = np.zeros(traj.n_slots)
        gy = np.zeros(traj.n_slots)
        if self.slot_i.size == 0:
            return gx, gy
        z = self._pair_coords(traj)
        h4 = _h4(z)
        h5 = _h5(z)
        t4 = ((z - self.z_r) * self.g4).sum(axis=-1) + self.h4_r
        t5 = ((z - self.z_r) * self.g5).sum(axis=-1) + self.h5_r
        gh4 = _grad_h4(z)
        gh5 = _grad_h5(z)
        b1 = h4 - t5
        b2 = h5 - t4
        M = np.maximum(b1, b2)
        gM = np.where((b1 >= b2)[:, None], gh4 - self.g5, gh5 - self.g4)
        t1 = z[:, 0] ** 2 + z[:, 2] ** 2 + self.H**2
        t2 = z[:, 1] ** 2 + z[:, 3] ** 2 + self.H**2
        lin = self.E1 * t1 + self.E2 * t2
        glin = np.stack([2 * self.E1 * z[:, 0], 2 * self.E2 * z[:, 1],
                         2 * self.E1 * z[:, 2], 2 * self.E2 * z[:, 3]], axis=-1)
        gtil = (4 * self.h4_r[:, None] * self.g4 + 4 * self.h5_r[:, None] * self.g5
                - 2 * (h4 + h5)[:, None] * (gh4 + gh5))
        gpair = (-self.E4[:, None] * lin[:, None] * glin
                 - (2.0 * M**3 / self.E4)[:, None] * gM
                 + self.E3[:, None] * gtil)
        np.add.at(gx, self.slot_i, gpair[:, 0])
        np.add.at(gx, self.slot_j, gpair[:, 1])
        np.add.at(gy, self.slot_i, gpair[:, 2])
        np.add.at(gy, self.slot_j, gpair[:, 3])
        return gx, gy

    # -- combined constraint ------------------------------------------------

    def value(self, traj: Trajectory) -> float:
        """c = g1 - xi_l * g2; +inf outside the minorant's trust region."""
        try:
            g1 = self.g1_value(traj)
        except DomainError:
            return np.inf
        return g1 - self.xi_l * self.g2_value(traj)

    def gradient(self, traj: Trajectory):
        g1x, g1y = self.g1_gradient(traj)
        g2x, g2y = self.g2_gradient(traj)
        return g1x - self.xi_l * g2x, g1y - self.xi_l * g2y


def g1(local: LocalPoint, m: int, s, params: SystemParams) -> ConstraintSurrogate:
    """Surrogate carrier built at the local trajectory (use .g1_value etc.)."""
    return constraint_surrogate(local, m, s, params)


def g2(local: LocalPoint, m: int, s, params: SystemParams) -> ConstraintSurrogate:
    return constraint_surrogate(local, m, s, params)


def constraint_surrogate(local: LocalPoint, m: int, s,
                         params: SystemParams) -> ConstraintSurrogate:
    """Freeze all surrogate constants for window m and target s."""
    traj = local.traj
    s = np.asarray(s, dtype=float)
    eta = params.eta
    H2 = params.H**2
    idx = traj.window(m, params.L)
    u_r = traj.x[idx] - s[0]
    v_r = traj.y[idx] - s[1]
    t_r = u_r**2 + v_r**2 + H2

    B1 = 3 * eta * H2 / t_r**4 + 16 * H2 / t_r**3
    B2 = -eta * H2 / t_r**3 - 8 * H2 / t_r**2 - B1 * t_r

    ii, jj = np.triu_indices(params.L, k=1)
    z_r = np.stack([u_r[ii], u_r[jj], v_r[ii], v_r[jj]], axis=-1)
    t1 = t_r[ii]
    t2 = t_r[jj]
    E1 = (3 * eta**2 / (t1**4 * t2**3) + 24 * eta / (t1**4 * t2**2)
          + 16 * eta / (t1**3 * t2**3) + 128 / (t1**3 * t2**2))
    E2 = (3 * eta**2 / (t1**3 * t2**4) + 16 * eta / (t1**3 * t2**3)
          + 24 * eta / (t1**2 * t2**4) + 128 / (t1**2 * t2**3))
    E3 = _h2(t1, t2, eta) + E1 * t1 + E2 * t2
    psi_r = (z_r[:, 0] * z_r[:, 3] - z_r[:, 1] * z_r[:, 2]) ** 2
    h4_r = _h4(z_r)
    h5_r = _h5(z_r)
    live = psi_r > np.maximum(PSI_DEGENERATE_TOL,
                              1e-24 * (h4_r + h5_r) ** 2)
    lin_r = E1 * t1 + E2 * t2
    E4 = np.where(live, psi_r / lin_r, 1.0)

    sur = ConstraintSurrogate(
        m=int(m), s=s, xi_l=params.xi_l, eta=eta, H=params.H, idx=idx,
        ax=2 * u_r, ay=2 * v_r, phi0=2 * H2 - t_r, B1=B1, B2=B2,
        slot_i=idx[ii][live], slot_j=idx[jj][live],
        E1=E1[live], E2=E2[live], E3=E3[live], E4=E4[live],
        h4_r=h4_r[live], h5_r=h5_r[live],
        g4=_grad_h4(z_r)[live], g5=_grad_h5(z_r)[live], z_r=z_r[live],
        n_dropped=int((~live).sum()))
    sur.c_local = sur.value(traj)
    return sur


def build_constraint_surrogates(local: LocalPoint, targets,
                                params: SystemParams) -> list:
    """Surrogates for every (window start, reference target) combination."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    N = local.traj.n_slots
    return [constraint_surrogate(local, m, s, params)
            for s in targets for m in range(N)]
