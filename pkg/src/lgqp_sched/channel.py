"""Multi-cell downlink channel model.

Rayleigh small-scale fading on top of a distance-based path loss, MRT
precoding at a fixed per-subcarrier power, SINR with full co-channel
interference, and the finite-blocklength (normal approximation) rate.

Tensor conventions used throughout the package:

* channel gains ``h[f, b, m, u]``  (subcarrier, BS, antenna, UE)
* allocation ``zeta[u, f]`` and beamformers ``w[u, f, m]``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

LOG2E_SQ = math.log2(math.e) ** 2


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


class DegenerateChannelError(ValueError):
    """Raised when a beamformer is requested for an all-zero channel."""


@dataclass
class TopologyConfig:
    num_bs: int = 3
    ues_per_bs: int = 2
    num_subcarriers: int = 32
    num_antennas: int = 16
    cell_radius: float = 40.0
    ref_distance: float = 1.0
    path_loss_exp: float = 2.0
    noise_dbm: float = -129.0
    max_power: float = 10.0
    block_error_rate: float = 1e-9
    # Optional fixed UE distances, shape (num_bs, num_ues). When unset the
    # environment draws UE positions uniformly in each cell disk.
    ue_distances: list | None = field(default=None)

    def __post_init__(self):
        for name in ("num_bs", "ues_per_bs", "num_subcarriers", "num_antennas"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ref_distance <= 0:
            raise ValueError("ref_distance must be > 0")
        if self.path_loss_exp < 0:
            raise ValueError("path_loss_exp must be >= 0")
        if self.max_power <= 0:
            raise ValueError("max_power must be > 0")
        if self.cell_radius <= 0:
            raise ValueError("cell_radius must be > 0")
        if not 0.0 < self.block_error_rate < 0.5:
            raise ValueError("block_error_rate: probability out of range (0, 0.5)")
        if self.ue_distances is not None:
            d = np.asarray(self.ue_distances, dtype=float)
            if d.shape != (self.num_bs, self.num_ues) or np.any(d < 0):
                raise ValueError(
                    f"ue_distances must be a nonnegative {self.num_bs}x{self.num_ues} matrix"
                )

    @property
    def num_ues(self) -> int:
        return self.num_bs * self.ues_per_bs

    @property
    def noise_power(self) -> float:
        """Noise power per subcarrier in watts."""
        return dbm_to_watts(self.noise_dbm)

    @property
    def subcarrier_power(self) -> float:
        """Fixed transmit power of one scheduled (UE, subcarrier) pair."""
        return self.max_power / self.num_subcarriers

    def serving_bs(self) -> np.ndarray:
        """Index of the serving BS for every UE (UEs are numbered cell by cell)."""
        return np.repeat(np.arange(self.num_bs), self.ues_per_bs)

    def users_of(self, b: int) -> range:
        return range(b * self.ues_per_bs, (b + 1) * self.ues_per_bs)


@dataclass(frozen=True)
class ChannelRealization:
    gains: np.ndarray  # complex, (F, B, M, U)

    @property
    def shape(self):
        return self.gains.shape

    def serving_norms(self, serving: np.ndarray) -> np.ndarray:
        """||h_{f, b_u, u}|| for every UE and subcarrier, shape (U, F)."""
        u = np.arange(self.gains.shape[3])
        h = self.gains[:, serving, :, u]  # (U, F, M)
        return np.linalg.norm(h, axis=-1)


@dataclass
class Allocation:
    zeta: np.ndarray  # int8, (U, F)
    w: np.ndarray  # complex, (U, F, M)

    @classmethod
    def empty(cls, num_ues: int, num_subcarriers: int, num_antennas: int) -> "Allocation":
        return cls(
            zeta=np.zeros((num_ues, num_subcarriers), dtype=np.int8),
            w=np.zeros((num_ues, num_subcarriers, num_antennas), dtype=complex),
        )

    def subcarriers_of(self, u: int) -> list[int]:
        return np.flatnonzero(self.zeta[u]).tolist()


# -- geometry ---------------------------------------------------------------


def bs_positions(cfg: TopologyConfig) -> np.ndarray:
    """BS sites on a circle so that neighbouring cell disks touch.

    One BS sits at the origin; two or three BSs form a regular polygon with
    side ``2 * cell_radius``; larger counts are placed on a ring with the same
    neighbour spacing.
    """
    n = cfg.num_bs
    if n == 1:
        return np.zeros((1, 2))
    side = 2.0 * cfg.cell_radius
    ring = side / (2.0 * math.sin(math.pi / n))
    ang = 2.0 * math.pi * np.arange(n) / n + math.pi / 2
    return ring * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def place_ues(cfg: TopologyConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform UE positions in the disk of their serving cell, shape (U, 2)."""
    sites = bs_positions(cfg)[cfg.serving_bs()]
    r = cfg.cell_radius * np.sqrt(rng.random(cfg.num_ues))
    phi = 2.0 * math.pi * rng.random(cfg.num_ues)
    return sites + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def distances(cfg: TopologyConfig, ue_pos: np.ndarray) -> np.ndarray:
    """BS-to-UE distances, shape (B, U)."""
    sites = bs_positions(cfg)
    return np.linalg.norm(sites[:, None, :] - ue_pos[None, :, :], axis=-1)


# -- channel ----------------------------------------------------------------


def large_scale_gain(d, cfg: TopologyConfig):
    """Path-loss factor (1 + d/d0)^(-alpha); works on scalars and arrays."""
    return (1.0 + np.asarray(d, dtype=float) / cfg.ref_distance) ** (-cfg.path_loss_exp)


def draw_channel(
    cfg: TopologyConfig, rng: np.random.Generator, dist: np.ndarray | None = None
) -> ChannelRealization:
    """Draw one block-fading realization h = g * sqrt(beta), g ~ CN(0, 1)."""
    if dist is None:
        if cfg.ue_distances is None:
            raise ValueError("no UE distances: pass dist or set cfg.ue_distances")
        dist = np.asarray(cfg.ue_distances, dtype=float)
    shape = (cfg.num_subcarriers, cfg.num_bs, cfg.num_antennas, cfg.num_ues)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)
    beta = large_scale_gain(dist, cfg)  # (B, U)
    return ChannelRealization(g * np.sqrt(beta)[None, :, None, :])


def mrt_beamformer(h: np.ndarray, power: float) -> np.ndarray:
    """w = sqrt(power) * h / ||h||."""
    if power < 0:
        raise ValueError("power must be >= 0")
    h = np.asarray(h, dtype=complex)
    norm = np.linalg.norm(h)
    if norm == 0.0:
        raise DegenerateChannelError("degenerate channel")
    return math.sqrt(power) * h / norm


def compute_sinr(alloc: Allocation, ch: ChannelRealization, cfg: TopologyConfig) -> np.ndarray:
    """Per (UE, subcarrier) SINR with co-channel interference, shape (U, F)."""
    serving = cfg.serving_bs()
    # h_tx[f, v, m, u]: channel from the BS serving v to UE u
    h_tx = ch.gains[:, serving, :, :]
    w = alloc.w * alloc.zeta[:, :, None]
    # rx[f, v, u] = |h_{f, b_v, u}^H w_{v, f}|^2
    rx = np.abs(np.einsum("fvmu,vfm->fvu", h_tx.conj(), w)) ** 2
    total = rx.sum(axis=1)  # (F, U)
    own = np.einsum("fuu->fu", rx)
    interference = total - own
    gamma = (alloc.zeta.T * own) / (interference + cfg.noise_power)
    return np.ascontiguousarray(gamma.T)


# -- finite blocklength rate ------------------------------------------------


def gaussian_q(x: float) -> float:
    """Standard normal tail probability."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


@lru_cache(maxsize=64)
def q_inverse(eps: float) -> float:
    """Inverse of the Gaussian Q function, by bisection to 1e-12 width."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"q_inverse: eps={eps} outside (0, 1)")
    if eps == 0.5:
        return 0.0
    lo, hi = -40.0, 40.0
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if gaussian_q(mid) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dispersion(gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    return LOG2E_SQ * (1.0 - (1.0 + gamma) ** -2)


def achievable_rate(gamma_row, eps: float) -> float:
    """Finite-blocklength bits per slot for one UE, clamped at zero."""
    gamma_row = np.asarray(gamma_row, dtype=float)
    shannon = float(np.log2(1.0 + gamma_row).sum())
    penalty = q_inverse(eps) * math.sqrt(float(dispersion(gamma_row).sum()))
    return max(shannon - penalty, 0.0)


def achievable_rates(gamma: np.ndarray, eps) -> np.ndarray:
    """Row-wise ``achievable_rate`` over a (U, F) SINR matrix."""
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (gamma.shape[0],))
    qinv = np.array([q_inverse(float(e)) for e in eps])
    shannon = np.log2(1.0 + gamma).sum(axis=1)
    penalty = qinv * np.sqrt(dispersion(gamma).sum(axis=1))
    return np.maximum(shannon - penalty, 0.0)
