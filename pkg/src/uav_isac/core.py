"""Scenario data types, periodic indexing, geometry and feasibility predicates.

All quantities are kept in linear SI units (watts, meters, seconds).
Conversions from dB / dBm happen at the configuration boundary only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SystemParams:
    """Scalar parameters of the scenario.

    Exactly one of ``xi_d`` (detection SNR threshold, linear) or ``dbar0``
    (horizontal detection radius, meters) must be given.
    """

    T: float            # operation period [s]
    N: int              # number of slots
    V: float            # max UAV speed [m/s]
    H: float            # flight altitude [m]
    beta: float         # reference channel gain at 1 m, linear
    P: float            # transmit power [W]
    sigma2: float       # communication noise power [W]
    sigma0_2: float     # sensing noise power [W]
    sigmaR_Gr: float    # RCS times receive antenna gain, linear
    alpha_t: float      # ranging-variance scale
    L: int              # slots per localization window
    xi_l: float         # max allowable localization CRB [m^2]
    xi_d: float | None = None
    dbar0: float | None = None

    def __post_init__(self):
        positive = {
            "T": self.T, "N": self.N, "V": self.V, "H": self.H,
            "beta": self.beta, "P": self.P, "sigma2": self.sigma2,
            "sigma0_2": self.sigma0_2, "sigmaR_Gr": self.sigmaR_Gr,
            "alpha_t": self.alpha_t, "L": self.L, "xi_l": self.xi_l,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.L < 3:
            raise ValueError("localization needs at least 3 slots per window")
        if self.N < self.L:
            raise ValueError("slot count N must be at least the window length L")
        if (self.xi_d is None) == (self.dbar0 is None):
            raise ValueError("exactly one of xi_d and dbar0 must be provided")
        if self.xi_d is not None and self.xi_d <= 0:
            raise ValueError("xi_d must be positive")
        if self.dbar0 is not None and self.dbar0 <= 0:
            raise ValueError("dbar0 must be positive")

    @property
    def delta(self) -> float:
        """Slot length T / N [s]."""
        return self.T / self.N

    @property
    def eta(self) -> float:
        """Combined sensing gain sigmaR_Gr * beta * P / (alpha_t * sigma0_2)."""
        return self.sigmaR_Gr * self.beta * self.P / (self.alpha_t * self.sigma0_2)

    @property
    def snr_factor(self) -> float:
        """Communication SNR at 1 m, beta * P / sigma2."""
        return self.beta * self.P / self.sigma2

    @property
    def echo_factor(self) -> float:
        """Echo SNR numerator sigmaR_Gr * beta * P / sigma0_2."""
        return self.sigmaR_Gr * self.beta * self.P / self.sigma0_2


class Trajectory:
    """Periodic UAV waypoint sequence; index n+N wraps back to n."""

    __slots__ = ("x", "y")

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float).copy()
        y = np.asarray(y, dtype=float).copy()
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ValueError("x and y must be equal-length 1-D arrays")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("trajectory coordinates must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):
        raise AttributeError("Trajectory is immutable")

    @property
    def n_slots(self) -> int:
        return self.x.size

    def point(self, n: int) -> np.ndarray:
        """Waypoint at slot n, with periodic wraparound."""
        n = int(n) % self.n_slots
        return np.array([self.x[n], self.y[n]])

    def window(self, m: int, L: int) -> np.ndarray:
        """Slot indices of the window starting at m, wrapped mod N."""
        return (int(m) + np.arange(L)) % self.n_slots

    def __eq__(self, other):
        return (isinstance(other, Trajectory)
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y))

    def __repr__(self):
        return f"Trajectory(N={self.n_slots})"


class Assignment:
    """Relaxed user-scheduling matrix, rows sum to one."""

    __slots__ = ("a",)

    ROW_SUM_TOL = 1e-9

    def __init__(self, a):
        a = np.asarray(a, dtype=float).copy()
        if a.ndim != 2:
            raise ValueError("assignment must be an N x K matrix")
        if np.any(a < -self.ROW_SUM_TOL) or np.any(a > 1 + self.ROW_SUM_TOL):
            raise ValueError("assignment entries must lie in [0, 1]")
        row_sums = a.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > self.ROW_SUM_TOL):
            raise ValueError("assignment rows must sum to 1")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    def __setattr__(self, name, value):
        raise AttributeError("Assignment is immutable")

    @classmethod
    def uniform(cls, n_slots: int, n_users: int) -> "Assignment":
        return cls(np.full((n_slots, n_users), 1.0 / n_users))

    @property
    def n_slots(self) -> int:
        return self.a.shape[0]

    @property
    def n_users(self) -> int:
        return self.a.shape[1]

    def __repr__(self):
        return f"Assignment(N={self.n_slots}, K={self.n_users})"


@dataclass(frozen=True)
class UserSet:
    """Ground user positions, one (x, y) row per user."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).copy()
        if w.ndim != 2 or w.shape[1] != 2 or w.shape[0] < 1:
            raise ValueError("user positions must be a K x 2 array with K >= 1")
        if not np.all(np.isfinite(w)):
            raise ValueError("user positions must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n_users(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class SensingRegion:
    """Serving region D as a finite union of closed discs."""

    discs: tuple

    def __init__(self, discs):
        cleaned = []
        for center, radius in discs:
            center = np.asarray(center, dtype=float).copy()
            if center.shape != (2,) or not np.all(np.isfinite(center)):
                raise ValueError("disc center must be a finite 2-vector")
            radius = float(radius)
            if radius <= 0:
                raise ValueError("disc radius must be positive")
            center.setflags(write=False)
            cleaned.append((center, radius))
        if not cleaned:
            raise ValueError("region needs at least one disc")
        object.__setattr__(self, "discs", tuple(cleaned))

    def contains(self, points) -> np.ndarray:
        """Membership test for an (M, 2) array of points (or a single point)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(pts.shape[0], dtype=bool)
        for center, radius in self.discs:
            d2 = ((pts - center) ** 2).sum(axis=1)
            inside |= d2 <= radius**2 * (1 + 1e-12) + 1e-12
        return inside if np.asarray(points).ndim == 2 else inside[0]

    @property
    def areas(self) -> np.ndarray:
        return np.array([np.pi * r**2 for _, r in self.discs])

    def bounding_box(self):
        lo = np.min([c - r for c, r in self.discs], axis=0)
        hi = np.max([c + r for c, r in self.discs], axis=0)
        return lo, hi


def slot_distance(traj: Trajectory, n: int, p, H: float) -> float:
    """UAV-to-ground distance sqrt((x_n - p_x)^2 + (y_n - p_y)^2 + H^2)."""
    px, py = float(p[0]), float(p[1])
    n = int(n) % traj.n_slots
    return float(np.sqrt((traj.x[n] - px) ** 2 + (traj.y[n] - py) ** 2 + H**2))


def squared_distances(traj: Trajectory, p, H: float) -> np.ndarray:
    """Per-slot squared distances to ground point p, as a length-N array."""
    px, py = float(p[0]), float(p[1])
    return (traj.x - px) ** 2 + (traj.y - py) ** 2 + H**2


def speed_feasible(traj: Trajectory, params: SystemParams, tol: float = 0.0) -> bool:
    """Check the per-slot displacement bound, wrapping slot N back to slot 1."""
    dx = np.roll(traj.x, -1) - traj.x
    dy = np.roll(traj.y, -1) - traj.y
    limit = (params.delta * params.V) ** 2
    return bool(np.all(dx**2 + dy**2 <= limit + tol))


def max_speed_violation(traj: Trajectory, params: SystemParams) -> float:
    """Largest squared-displacement excess over the speed bound (0 if feasible)."""
    dx = np.roll(traj.x, -1) - traj.x
    dy = np.roll(traj.y, -1) - traj.y
    limit = (params.delta * params.V) ** 2
    return float(max(0.0, np.max(dx**2 + dy**2) - limit))
