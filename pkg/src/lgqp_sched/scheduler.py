"""Scheduling layer: turns per-user directives into a feasible allocation.

Both schedulers plan with the interference-free rate of the serving link
(noise-only SINR) and hand out subcarriers in descending channel-norm
order, optionally preferring subcarriers that no other cell uses yet.
Every granted (UE, subcarrier) pair gets an MRT beamformer at
``max_power / F`` so the per-BS power budget holds for any allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    LOG2E_SQ,
    Allocation,
    ChannelRealization,
    TopologyConfig,
    achievable_rate,
    q_inverse,
)
from .traffic import UserBuffer


class ConstraintViolation(RuntimeError):
    """An allocation broke one of the resource constraints."""


@dataclass(frozen=True)
class UserDirective:
    user: int
    priority: int
    requested_packets: int


@dataclass(frozen=True)
class ActionSpace:
    """Flat agent action index <-> (priority, packet count)."""

    num_priorities: int = 4
    max_packets: int = 5

    @property
    def size(self) -> int:
        return self.num_priorities * (self.max_packets + 1)

    def decode(self, a: int) -> tuple[int, int]:
        if not 0 <= a < self.size:
            raise ValueError(f"action {a} outside [0, {self.size})")
        return divmod(int(a), self.max_packets + 1)

    def encode(self, priority: int, packets: int) -> int:
        return priority * (self.max_packets + 1) + packets

    def directives(self, actions) -> list[UserDirective]:
        out = []
        for u, a in enumerate(actions):
            p, n = self.decode(a)
            out.append(UserDirective(u, p, n))
        return out


@dataclass
class RoundRobinState:
    cursor: list[int] = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: TopologyConfig) -> "RoundRobinState":
        return cls([0] * cfg.num_bs)


def interference_free_sinr(ch: ChannelRealization, cfg: TopologyConfig) -> np.ndarray:
    """Noise-only SINR of every serving link under MRT, shape (U, F)."""
    norms = ch.serving_norms(cfg.serving_bs())
    return cfg.subcarrier_power * norms**2 / cfg.noise_power


def interference_free_rate(subcarriers, ch: ChannelRealization, u: int, eps: float,
                           cfg: TopologyConfig) -> float:
    subcarriers = list(subcarriers)
    if not subcarriers:
        return 0.0
    gamma = interference_free_sinr(ch, cfg)[u, subcarriers]
    return achievable_rate(gamma, eps)


class _Planner:
    """Greedy subcarrier bookkeeping for one slot.

    With ``avoid_reuse`` a user first picks among subcarriers no other cell
    has taken yet this slot, strongest first, and only then reuses busy ones.
    """

    def __init__(self, ch: ChannelRealization, cfg: TopologyConfig, avoid_reuse: bool = True):
        self.ch = ch
        self.cfg = cfg
        self.avoid_reuse = avoid_reuse
        self.serving = cfg.serving_bs()
        self.norms = ch.serving_norms(self.serving)
        self.gamma = cfg.subcarrier_power * self.norms**2 / cfg.noise_power
        self.qinv = q_inverse(cfg.block_error_rate)
        U, F = self.norms.shape
        self.free = np.ones((cfg.num_bs, F), dtype=bool)
        self.shannon = np.zeros(U)
        self.disp = np.zeros(U)
        self.alloc = Allocation.empty(U, F, cfg.num_antennas)
        self.amplitude = math.sqrt(cfg.subcarrier_power)

    def rate(self, u: int) -> float:
        return max(self.shannon[u] - self.qinv * math.sqrt(self.disp[u]), 0.0)

    def rate_of(self, u: int, subcarriers) -> float:
        g = self.gamma[u, subcarriers]
        shannon = float(np.log2(1.0 + g).sum())
        disp = float((LOG2E_SQ * (1.0 - (1.0 + g) ** -2)).sum())
        return max(shannon - self.qinv * math.sqrt(disp), 0.0)

    def grant_best(self, u: int) -> int:
        """Grant u its best remaining subcarrier; -1 when the cell is full."""
        b = self.serving[u]
        cand = self.free[b]
        if self.avoid_reuse:
            busy_elsewhere = (~np.delete(self.free, b, axis=0)).any(axis=0)
            clean = cand & ~busy_elsewhere
            if clean.any():
                cand = clean
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return -1
        # argmax keeps the lowest index among equal norms
        f = int(idx[np.argmax(self.norms[u, idx])])
        if self.norms[u, f] == 0.0:
            return -1
        self.free[b, f] = False
        g = self.gamma[u, f]
        self.shannon[u] += math.log2(1.0 + g)
        self.disp[u] += LOG2E_SQ * (1.0 - (1.0 + g) ** -2)
        self.alloc.zeta[u, f] = 1
        self.alloc.w[u, f] = self.amplitude * self.ch.gains[f, b, :, u] / self.norms[u, f]
        return f

    def cover(self, u: int, target: float) -> bool:
        """Grant subcarriers until u's planned rate reaches target."""
        while self.rate(u) < target:
            if self.grant_best(u) < 0:
                return False
        return True

    def cover_packet(self, u: int, bits: float) -> bool:
        """Grant fresh subcarriers whose planned rate alone carries ``bits``."""
        got: list[int] = []
        while not got or self.rate_of(u, got) < bits:
            f = self.grant_best(u)
            if f < 0:
                return False
            got.append(f)
        return True


def _order_key(d: UserDirective, buffers, t: int):
    return (d.priority, buffers[d.user].head_arrival(t), d.user)


def allocate(directives, ch: ChannelRealization, buffers: list[UserBuffer],
             cfg: TopologyConfig, t: int, avoid_reuse: bool = True) -> Allocation:
    """Priority-ordered greedy allocation.

    Users are served in ascending priority value, ties broken by the oldest
    servable packet and then by user id. Each user receives its serving BS's
    best free subcarriers until the planned rate covers
    ``min(n * G_u, eligible bits)``.
    """
    plan = _Planner(ch, cfg, avoid_reuse)
    for d in sorted(directives, key=lambda d: _order_key(d, buffers, t)):
        if d.requested_packets <= 0:
            continue
        buf = buffers[d.user]
        target = min(d.requested_packets * buf.packet_size, buf.eligible_bits(t))
        if target > 0:
            plan.cover(d.user, target)
    return plan.alloc


def round_robin_edf(state: RoundRobinState, ch: ChannelRealization,
                    buffers: list[UserBuffer], cfg: TopologyConfig, t: int,
                    avoid_reuse: bool = True) -> Allocation:
    """Round-robin EDF baseline.

    Every cell visits its users in turn starting at its cursor; a visit
    grants fresh subcarriers for the user's most urgent pending packet only.
    Rounds repeat while the cell has subcarriers and packets left. Cells take
    their k-th visit in lockstep so no cell grabs the clean spectrum first.
    """
    plan = _Planner(ch, cfg, avoid_reuse)
    n_b = cfg.ues_per_bs
    orders, pending = [], {}
    for b in range(cfg.num_bs):
        users = list(cfg.users_of(b))
        orders.append([users[(state.cursor[b] + k) % n_b] for k in range(n_b)])
        for u in users:
            pending[u] = [p.remaining for p in buffers[u].eligible(t)]
    active = [True] * cfg.num_bs
    visited = [False] * cfg.num_bs

    def busy(b):
        return active[b] and any(pending[u] for u in orders[b])

    while any(busy(b) for b in range(cfg.num_bs)):
        for k in range(n_b):
            for b in range(cfg.num_bs):
                u = orders[b][k]
                if not active[b] or not pending[u]:
                    continue
                visited[b] = True
                if not plan.cover_packet(u, pending[u].pop(0)):
                    active[b] = False
    for b in range(cfg.num_bs):
        if visited[b]:
            state.cursor[b] = (state.cursor[b] + 1) % n_b
    return plan.alloc


def validate_allocation(alloc: Allocation, cfg: TopologyConfig, tol: float = 1e-9) -> None:
    """Raise ConstraintViolation naming the first resource constraint that fails."""
    zeta = alloc.zeta
    if not np.isin(zeta, (0, 1)).all():
        raise ConstraintViolation("zeta is not binary")
    serving = cfg.serving_bs()
    per_bs = np.zeros((cfg.num_bs, zeta.shape[1]), dtype=int)
    np.add.at(per_bs, serving, zeta.astype(int))
    if (per_bs > 1).any():
        b, f = np.argwhere(per_bs > 1)[0]
        raise ConstraintViolation(f"BS {b} schedules several users on subcarrier {f}")
    pw = (np.linalg.norm(alloc.w, axis=-1) ** 2) * zeta
    per_bs_power = np.zeros(cfg.num_bs)
    np.add.at(per_bs_power, serving, pw.sum(axis=1))
    if (per_bs_power > cfg.max_power + tol).any():
        b = int(np.argmax(per_bs_power))
        raise ConstraintViolation(
            f"BS {b} power {per_bs_power[b]:.12g} W exceeds {cfg.max_power} W"
        )
