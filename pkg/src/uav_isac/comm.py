"""Communication rate and throughput evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Assignment, SystemParams, Trajectory, UserSet, squared_distances


@dataclass(frozen=True)
class ThroughputReport:
    per_user: np.ndarray    # bits/Hz accumulated over the period, one entry per user
    min_value: float
    argmin_user: int


def capacity(traj: Trajectory, n: int, user_pos, params: SystemParams) -> float:
    """Per-slot spectral efficiency log2(1 + beta*P / (sigma^2 d^2))."""
    n = int(n) % traj.n_slots
    d2 = squared_distances(traj, user_pos, params.H)[n]
    return float(np.log2(1.0 + params.snr_factor / d2))


def rate_matrix(traj: Trajectory, users: UserSet, params: SystemParams) -> np.ndarray:
    """Spectral efficiencies for all (slot, user) pairs as an N x K array."""
    d2 = np.stack([squared_distances(traj, w, params.H) for w in users.w], axis=1)
    return np.log2(1.0 + params.snr_factor / d2)


def throughput(traj: Trajectory, assign: Assignment, users: UserSet,
               params: SystemParams) -> ThroughputReport:
    """Accumulated per-user throughput U_k = sum_n a_{n,k} * delta * R_{n,k}."""
    if assign.n_users != users.n_users or assign.n_slots != traj.n_slots:
        raise ValueError("assignment shape does not match trajectory/users")
    rates = rate_matrix(traj, users, params)
    per_user = params.delta * (assign.a * rates).sum(axis=0)
    argmin = int(np.argmin(per_user))
    return ThroughputReport(per_user=per_user, min_value=float(per_user[argmin]),
                            argmin_user=argmin)


def min_throughput(traj: Trajectory, assign: Assignment, users: UserSet,
                   params: SystemParams) -> float:
    return throughput(traj, assign, users, params).min_value
