"""Virtual queues for the delay-violation bound and drift-plus-penalty rewards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RewardConfig:
    penalty: float = 50.0  # mu, weight of the running jitter
    scale: float = 500.0  # Omega
    bias: float = 1.0
    violation_penalty: float = 50.0  # delta, QP-IPS baseline only
    drift_const: float = 0.0  # B

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if self.violation_penalty < 0:
            raise ValueError("violation_penalty must be >= 0")


def update_virtual_queue(H, violations, arrivals, eta) -> np.ndarray:
    """H <- [H - eta * A]^+ + violations, elementwise over users."""
    H = np.asarray(H, dtype=float)
    return np.maximum(H - np.asarray(eta) * np.asarray(arrivals), 0.0) + np.asarray(
        violations, dtype=float
    )


def normalized_drift(Z, H, psi, violations, G, lam, eta, drift_const=0.0) -> float:
    """Drift bound with the bit queue expressed in packets.

    ``B + sum Z/G (lam - psi/G) + sum H (violations - eta lam)``
    """
    Z, H, psi, G = (np.asarray(x, dtype=float) for x in (Z, H, psi, G))
    lam, eta = np.asarray(lam, dtype=float), np.asarray(eta, dtype=float)
    v = np.asarray(violations, dtype=float)
    return float(drift_const + np.sum(Z / G * (lam - psi / G)) + np.sum(H * (v - eta * lam)))


def drift_bound(Z, H, psi, violations, G, lam, eta, drift_const=0.0) -> float:
    """Un-normalized drift bound: ``B + sum Z (G lam - psi) + sum H (violations - eta lam)``."""
    Z, H, psi, G = (np.asarray(x, dtype=float) for x in (Z, H, psi, G))
    lam, eta = np.asarray(lam, dtype=float), np.asarray(eta, dtype=float)
    v = np.asarray(violations, dtype=float)
    return float(drift_const + np.sum(Z * (G * lam - psi)) + np.sum(H * (v - eta * lam)))


def lgqp_reward(drift: float, jitter: float, cfg: RewardConfig) -> float:
    return -((drift + cfg.penalty * jitter) / cfg.scale - cfg.bias)


def cumulative_violation_ratio(violations, arrivals) -> float:
    """Mean over users of cumulative violations / cumulative arrivals."""
    v = np.asarray(violations, dtype=float)
    a = np.asarray(arrivals, dtype=float)
    ratio = np.divide(v, a, out=np.zeros_like(v), where=a > 0)
    return float(ratio.mean()) if ratio.size else 0.0


def qpips_reward(jitter: float, violations, arrivals, delta: float) -> float:
    """Baseline reward: -(jitter + delta * cumulative violation ratio)."""
    return -(jitter + delta * cumulative_violation_ratio(violations, arrivals))


def running_jitter(records) -> float:
    """Jitter over the packets delivered so far (incremental sums, O(1))."""
    return records.running_jitter()
