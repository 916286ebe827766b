"""Echo SNR, detection-region characterization and exact localization CRB.

The localization accuracy of a request window starting at slot m toward a
ground point s is measured by the trace of the inverse Fisher information
matrix of the ranging measurements collected over the L window slots.  With
u = x_n - s_x, v = y_n - s_y and d^2 = u^2 + v^2 + H^2 the FIM entries are

    Theta_a = sum_n u^2 * (eta / d^6 + 8 / d^4)
    Theta_b = sum_n v^2 * (eta / d^6 + 8 / d^4)
    Theta_c = sum_n u*v * (eta / d^6 + 8 / d^4)

and the CRB is (Theta_a + Theta_b) / (Theta_a*Theta_b - Theta_c^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SensingRegion, SystemParams, Trajectory, squared_distances


class SingularFIM(ArithmeticError):
    """Raised when the window geometry cannot localize (rank-deficient FIM)."""


#: relative determinant floor below which the FIM counts as singular
SINGULAR_REL_TOL = 1e-15


@dataclass(frozen=True)
class ThetaTerms:
    theta_a: float
    theta_b: float
    theta_c: float

    @property
    def det(self) -> float:
        return self.theta_a * self.theta_b - self.theta_c**2

    @property
    def trace(self) -> float:
        return self.theta_a + self.theta_b

    def is_singular(self) -> bool:
        return self.det <= SINGULAR_REL_TOL * self.trace**2


@dataclass(frozen=True)
class DeploymentRegion:
    """Intersection of discs every UAV waypoint must lie in (convex)."""

    constraints: tuple     # ((center, radius), ...) with radius >= 0

    def __init__(self, constraints):
        cleaned = []
        for center, radius in constraints:
            center = np.asarray(center, dtype=float).copy()
            radius = float(radius)
            if radius < 0:
                raise ValueError("deployment constraint radius must be >= 0")
            center.setflags(write=False)
            cleaned.append((center, radius))
        if not cleaned:
            raise ValueError("deployment region needs at least one constraint disc")
        object.__setattr__(self, "constraints", tuple(cleaned))

    def contains(self, points, tol: float = 1e-9):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.ones(pts.shape[0], dtype=bool)
        for center, radius in self.constraints:
            d = np.sqrt(((pts - center) ** 2).sum(axis=1))
            ok &= d <= radius + tol
        return ok if np.asarray(points).ndim == 2 else ok[0]

    def max_violation(self, points) -> float:
        """Largest distance excess over any constraint disc (0 if inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        worst = 0.0
        for center, radius in self.constraints:
            d = np.sqrt(((pts - center) ** 2).sum(axis=1))
            worst = max(worst, float(np.max(d - radius)))
        return max(0.0, worst)

    @property
    def centroid(self) -> np.ndarray:
        return np.mean([c for c, _ in self.constraints], axis=0)

    def interior_radius(self, point) -> float:
        """Radius of the largest disc around `point` inside the region."""
        point = np.asarray(point, dtype=float)
        slack = [r - float(np.linalg.norm(point - c)) for c, r in self.constraints]
        return min(slack)


def echo_snr(traj: Trajectory, n: int, s, params: SystemParams) -> float:
    """Radar echo SNR, inversely proportional to d^4 (two-way path loss)."""
    n = int(n) % traj.n_slots
    d2 = squared_distances(traj, s, params.H)[n]
    return float(params.echo_factor / d2**2)


def detection_radius(params: SystemParams) -> float:
    """Horizontal radius within which every ground point meets the echo-SNR floor.

    Solving echo_factor / d^4 >= xi_d for the horizontal distance at altitude H
    gives sqrt(sqrt(echo_factor / xi_d) - H^2).
    """
    if params.dbar0 is not None:
        return params.dbar0
    radicand = np.sqrt(params.echo_factor / params.xi_d) - params.H**2
    if radicand <= 0:
        raise ValueError(
            "detection threshold unreachable at this altitude: "
            f"sqrt(echo_factor/xi_d) = {np.sqrt(params.echo_factor / params.xi_d):.6g} "
            f"<= H^2 = {params.H**2:.6g}")
    return float(np.sqrt(radicand))


def deployment_region(region: SensingRegion, dbar0: float) -> DeploymentRegion:
    """Shrink each serving disc by its radius to bound the UAV positions.

    A UAV position p covers disc (c, r) iff its distance to the farthest point
    of the disc, ||p - c|| + r, stays within dbar0.  Intersecting over all
    discs yields a convex region of discs (c, dbar0 - r).
    """
    if dbar0 <= 0:
        raise ValueError("dbar0 must be positive")
    constraints = []
    for center, radius in region.discs:
        slack = dbar0 - radius
        if slack < 0:
            raise ValueError(
                f"no UAV position can cover disc of radius {radius} with "
                f"detection radius {dbar0}")
        constraints.append((center, slack))
    return DeploymentRegion(constraints)


def _theta_weights(d2: np.ndarray, eta: float) -> np.ndarray:
    """Per-slot FIM weight eta / d^6 + 8 / d^4 as a function of d^2."""
    return eta / d2**3 + 8.0 / d2**2


def _theta_weights_deriv(d2: np.ndarray, eta: float) -> np.ndarray:
    """Derivative of the weight with respect to d^2."""
    return -3.0 * eta / d2**4 - 16.0 / d2**3


def theta_terms(traj: Trajectory, m: int, s, params: SystemParams) -> ThetaTerms:
    """FIM entries for the window of L slots starting at m (wrapped)."""
    idx = traj.window(m, params.L)
    u = traj.x[idx] - float(s[0])
    v = traj.y[idx] - float(s[1])
    d2 = u**2 + v**2 + params.H**2
    p = _theta_weights(d2, params.eta)
    return ThetaTerms(float((p * u * u).sum()), float((p * v * v).sum()),
                      float((p * u * v).sum()))


def crb(traj: Trajectory, m: int, s, params: SystemParams) -> float:
    """Localization CRB (Theta_a + Theta_b) / det for window m, target s."""
    th = theta_terms(traj, m, s, params)
    if th.is_singular():
        raise SingularFIM(
            f"window {m} is rank deficient for target {tuple(np.asarray(s))}")
    return th.trace / th.det


def crb_gradient(traj: Trajectory, m: int, s, params: SystemParams):
    """Analytic gradient of the CRB with respect to every waypoint.

    Returns (dPhi/dx, dPhi/dy) as length-N arrays, zero outside the window.
    """
    N = traj.n_slots
    idx = traj.window(m, params.L)
    u = traj.x[idx] - float(s[0])
    v = traj.y[idx] - float(s[1])
    d2 = u**2 + v**2 + params.H**2
    p = _theta_weights(d2, params.eta)
    dp = _theta_weights_deriv(d2, params.eta)

    th_a = float((p * u * u).sum())
    th_b = float((p * v * v).sum())
    th_c = float((p * u * v).sum())
    det = th_a * th_b - th_c**2
    tr = th_a + th_b
    if det <= SINGULAR_REL_TOL * tr**2:
        raise SingularFIM(f"window {m} is rank deficient")

    # per-slot partials of the three FIM entries
    da_dx = 2 * u * p + 2 * u**3 * dp
    da_dy = 2 * u**2 * v * dp
    db_dx = 2 * v**2 * u * dp
    db_dy = 2 * v * p + 2 * v**3 * dp
    dc_dx = v * p + 2 * u**2 * v * dp
    dc_dy = u * p + 2 * u * v**2 * dp

    ddet_dx = th_b * da_dx + th_a * db_dx - 2 * th_c * dc_dx
    ddet_dy = th_b * da_dy + th_a * db_dy - 2 * th_c * dc_dy
    dtr_dx = da_dx + db_dx
    dtr_dy = da_dy + db_dy

    gx_win = (dtr_dx * det - tr * ddet_dx) / det**2
    gy_win = (dtr_dy * det - tr * ddet_dy) / det**2

    gx = np.zeros(N)
    gy = np.zeros(N)
    np.add.at(gx, idx, gx_win)
    np.add.at(gy, idx, gy_win)
    return gx, gy


def window_matrix(N: int, L: int) -> np.ndarray:
    """0/1 matrix S with S[m, n] = 1 iff slot n lies in window m (wrapped)."""
    S = np.zeros((N, N))
    for m in range(N):
        S[m, (m + np.arange(L)) % N] = 1.0
    return S


def crb_table(traj: Trajectory, params: SystemParams, targets) -> np.ndarray:
    """CRB for every (window start, target) pair as an (N, T) array.

    Singular windows yield +inf.  This is the vectorized work-horse behind
    max_crb, the reference-point search and the audit commands.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    N = traj.n_slots
    S = window_matrix(N, params.L)
    u = traj.x[:, None] - targets[None, :, 0]          # (N, T)
    v = traj.y[:, None] - targets[None, :, 1]
    d2 = u**2 + v**2 + params.H**2
    p = _theta_weights(d2, params.eta)
    th_a = S @ (p * u * u)
    th_b = S @ (p * v * v)
    th_c = S @ (p * u * v)
    det = th_a * th_b - th_c**2
    tr = th_a + th_b
    out = np.full_like(det, np.inf)
    ok = det > SINGULAR_REL_TOL * tr**2
    out[ok] = tr[ok] / det[ok]
    return out


def max_crb(traj: Trajectory, params: SystemParams, targets):
    """Worst CRB over all window starts and targets.

    Returns (value, (m, target_point)); singular windows count as +inf.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.size == 0:
        raise ValueError("targets must be nonempty")
    table = crb_table(traj, params, targets)
    flat = int(np.argmax(table))
    m, t_idx = np.unravel_index(flat, table.shape)
    return float(table[m, t_idx]), (int(m), targets[t_idx].copy())


def fim_oracle_crb(traj: Trajectory, m: int, s, params: SystemParams) -> float:
    """Independent CRB route: assemble the ranging FIM, invert, take the trace.

    Builds the L x L measurement FIM (diagonal, with the covariance-derivative
    term), maps it through the distance Jacobian and inverts the resulting
    2 x 2 matrix numerically.  Kept deliberately separate from the closed form
    so the two can cross-check each other.
    """
    idx = traj.window(m, params.L)
    u = traj.x[idx] - float(s[0])
    v = traj.y[idx] - float(s[1])
    d = np.sqrt(u**2 + v**2 + params.H**2)
    sigma2 = params.alpha_t * d**4 / params.echo_factor
    J_d = np.diag(1.0 / sigma2 + 8.0 / d**2)
    Q = np.vstack([u / d, v / d])
    J_s = Q @ J_d @ Q.T
    return float(np.trace(np.linalg.inv(J_s)))
