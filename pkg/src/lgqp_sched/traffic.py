"""Poisson arrivals and per-user FIFO buffers, with delay bookkeeping."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

EXPIRED = "EXPIRED"


@dataclass(slots=True)
class Packet:
    arrival_slot: int
    size: int
    seq: int
    remaining: int
    violated: bool = False


def poisson_arrivals(lam: float, rng: np.random.Generator) -> int:
    if lam < 0:
        raise ValueError("arrival rate must be >= 0")
    return int(rng.poisson(lam))


@dataclass
class EventLog:
    """One row per finished packet: delivered (with delay) or expired."""

    rows: list = field(default_factory=list)

    def delivered(self, user: int, pkt: Packet, slot: int) -> None:
        self.rows.append((user, pkt.arrival_slot, pkt.seq, slot, slot - pkt.arrival_slot))

    def expired(self, user: int, pkt: Packet, slot: int) -> None:
        self.rows.append((user, pkt.arrival_slot, pkt.seq, EXPIRED, slot - pkt.arrival_slot))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["user", "arrival_slot", "seq", "completion_slot", "delay_slots"]
            )
            writer.writerows(self.rows)


class UserBuffer:
    """FIFO of packets for one user, served bit by bit.

    Packets that arrive in slot t become eligible from slot t+1. A packet
    whose age reaches ``deadline + 1`` slots without finishing is a deadline
    violation; it is counted once by :meth:`expire` and, with
    ``drop_on_expiry`` (the default), removed from the buffer.
    """

    def __init__(
        self,
        user: int,
        packet_size: int,
        deadline: int,
        arrival_rate: float = 0.0,
        violation_bound: float = 0.01,
        drop_on_expiry: bool = True,
        log: EventLog | None = None,
    ):
        if packet_size <= 0:
            raise ValueError("packet_size must be positive")
        if deadline < 1:
            raise ValueError("deadline must be >= 1 slot")
        self.user = user
        self.packet_size = int(packet_size)
        self.deadline = int(deadline)
        self.arrival_rate = arrival_rate
        self.violation_bound = violation_bound
        self.drop_on_expiry = drop_on_expiry
        self.log = log
        self.queue: deque[Packet] = deque()
        self._backlog = 0
        self._late_violations = 0

    def __len__(self) -> int:
        return len(self.queue)

    @property
    def backlog(self) -> int:
        """Z_u: residual bits of every buffered packet."""
        return self._backlog

    def _servable(self, pkt: Packet, t: int) -> bool:
        if pkt.arrival_slot >= t:
            return False
        # with dropping, a packet past its deadline is left for expire()
        return not (self.drop_on_expiry and t - pkt.arrival_slot > self.deadline)

    def eligible(self, t: int) -> list[Packet]:
        """Packets the scheduler may serve in slot t, in FIFO order."""
        return [p for p in self.queue if self._servable(p, t)]

    def eligible_bits(self, t: int) -> int:
        return sum(p.remaining for p in self.queue if self._servable(p, t))

    def head_arrival(self, t: int) -> float:
        """Arrival slot of the oldest servable packet (inf when none)."""
        for p in self.queue:
            if self._servable(p, t):
                return p.arrival_slot
        return math.inf

    def enqueue(self, t: int, count: int) -> None:
        for a in range(1, count + 1):
            self.queue.append(Packet(t, self.packet_size, a, self.packet_size))
        self._backlog += count * self.packet_size

    def serve(self, psi, t: int) -> list[tuple[Packet, int]]:
        """Drain up to floor(psi) bits FIFO; return finished (packet, delay)."""
        budget = int(math.floor(psi))
        done: list[tuple[Packet, int]] = []
        for pkt in list(self.queue):
            if budget <= 0:
                break
            if not self._servable(pkt, t):
                if pkt.arrival_slot >= t:
                    break
                continue
            take = min(budget, pkt.remaining)
            pkt.remaining -= take
            budget -= take
            self._backlog -= take
            if pkt.remaining == 0:
                self.queue.remove(pkt)
                delay = t - pkt.arrival_slot
                if delay > self.deadline:
                    # only reachable without dropping: late delivery
                    if not pkt.violated:
                        pkt.violated = True
                        self._late_violations += 1
                        if self.log is not None:
                            self.log.expired(self.user, pkt, t)
                    continue
                if self.log is not None:
                    self.log.delivered(self.user, pkt, t)
                done.append((pkt, delay))
        return done

    def expire(self, t: int) -> int:
        """Count (and by default drop) packets reaching age deadline + 1."""
        count = self._late_violations
        self._late_violations = 0
        keep: deque[Packet] = deque()
        for pkt in self.queue:
            if not pkt.violated and t - pkt.arrival_slot >= self.deadline + 1:
                pkt.violated = True
                count += 1
                if self.log is not None:
                    self.log.expired(self.user, pkt, t)
                if self.drop_on_expiry:
                    self._backlog -= pkt.remaining
                    continue
            keep.append(pkt)
        self.queue = keep
        return count


class DelayRecord:
    """Per-user delivered delays together with violation and arrival counts.

    Running sums (count, sum d, sum d^2) make the running jitter O(1).
    """

    def __init__(self, num_users: int):
        self.num_users = num_users
        self.delays: list[list[int]] = [[] for _ in range(num_users)]
        self.violations = np.zeros(num_users, dtype=np.int64)
        self.arrivals = np.zeros(num_users, dtype=np.int64)
        self._n = np.zeros(num_users)
        self._s1 = np.zeros(num_users)
        self._s2 = np.zeros(num_users)

    def add_delay(self, u: int, d: int) -> None:
        self.delays[u].append(d)
        self._n[u] += 1
        self._s1[u] += d
        self._s2[u] += d * d

    def add_violations(self, u: int, n: int) -> None:
        self.violations[u] += n

    def add_arrivals(self, u: int, n: int) -> None:
        self.arrivals[u] += n

    def running_jitter(self) -> float:
        n = np.maximum(self._n, 1.0)
        mean = self._s1 / n
        var = np.maximum(self._s2 / n - mean**2, 0.0)
        std = np.where(self._n >= 2, np.sqrt(var), 0.0)
        return float(std.mean()) if self.num_users else 0.0

    def snapshot(self) -> "DelayRecord":
        other = DelayRecord(self.num_users)
        other.delays = [list(d) for d in self.delays]
        other.violations = self.violations.copy()
        other.arrivals = self.arrivals.copy()
        other._n, other._s1, other._s2 = self._n.copy(), self._s1.copy(), self._s2.copy()
        return other


def jitter(records: DelayRecord) -> float:
    """Mean over users of the population std of delivered-packet delays."""
    if records.num_users == 0:
        return 0.0
    total = 0.0
    for d in records.delays:
        if len(d) >= 2:
            total += float(np.std(np.asarray(d, dtype=float)))
    return total / records.num_users


def violation_ratio(records: DelayRecord) -> np.ndarray:
    """Per-user cumulative violations / cumulative arrivals (0 with no arrivals)."""
    arr = records.arrivals.astype(float)
    return np.divide(
        records.violations, arr, out=np.zeros(records.num_users), where=arr > 0
    )
