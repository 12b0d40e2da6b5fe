"""Slot-level scheduling environment and episode runner.

Within slot t the order of events is fixed:

1. build the allocation (learned directives or Round-Robin EDF)
2. realized SINR and finite-blocklength rate per user
3. serve buffers, record delays
4. expire packets that reached deadline + 1
5. Poisson arrivals, visible from t + 1
6. virtual-queue update
7. drift, running jitter and rewards
8. advance t and redraw the channel
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import channel as chan
from .config import ExperimentConfig
from .lyapunov import (
    lgqp_reward,
    normalized_drift,
    running_jitter,
    qpips_reward,
    update_virtual_queue,
)
from .scheduler import (
    ActionSpace,
    RoundRobinState,
    allocate,
    round_robin_edf,
    validate_allocation,
)
from .traffic import DelayRecord, EventLog, UserBuffer, jitter, violation_ratio

POLICIES = ("lgqp", "qpips", "rr_edf")


@dataclass
class StepOutcome:
    obs: np.ndarray
    reward: float
    done: bool
    served_bits: np.ndarray
    rate_bits: np.ndarray
    violations: np.ndarray
    arrivals: np.ndarray
    drift: float
    jitter: float
    reward_lgqp: float
    reward_qpips: float


@dataclass
class EpisodeMetrics:
    policy: str
    seed: int
    packet_size: int
    violation_ratio: np.ndarray
    jitter: float
    mean_delay: float
    served_packets: int
    arrivals: np.ndarray
    violations: np.ndarray
    total_reward: float

    @property
    def mean_violation_ratio(self) -> float:
        return float(np.mean(self.violation_ratio))


@dataclass
class SlotRecord:
    slot: int
    backlog: np.ndarray
    virtual_queue: np.ndarray
    served_bits: np.ndarray
    dropped_bits: np.ndarray
    violations: np.ndarray
    arrivals: np.ndarray
    drift: float
    jitter: float
    reward: float


class SchedulingEnv:
    """Multi-cell downlink scheduling MDP for one packet size.

    ``policy`` selects the reward handed back in :class:`StepOutcome`
    (``lgqp``: drift-plus-penalty, ``qpips``: jitter plus violation-ratio
    penalty) and, for ``rr_edf``, the built-in baseline scheduler.
    """

    def __init__(self, cfg: ExperimentConfig, packet_size: int, policy: str = "lgqp",
                 record: bool = False):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.cfg = cfg
        self.topo = cfg.topology
        self.policy = policy
        self.packet_size = int(packet_size)
        self.actions = ActionSpace(cfg.scheduler.num_priorities, cfg.scheduler.max_packets)
        self.record = record
        U = self.topo.num_ues
        self.deadlines = np.asarray(cfg.traffic.deadlines, dtype=int)
        self.lam = np.asarray(cfg.traffic.arrival_rates(U), dtype=float)
        self.eta = np.asarray(cfg.traffic.violation_bounds(U), dtype=float)
        self.G = np.full(U, self.packet_size, dtype=float)
        self.horizon = cfg.trainer.slots_per_episode
        self.t = 0

    # -- observation --------------------------------------------------------

    @property
    def num_agents(self) -> int:
        return self.topo.num_ues

    queue_features = 5

    @property
    def obs_dim(self) -> int:
        return self.queue_features + self.topo.num_subcarriers

    def observe(self) -> np.ndarray:
        """Per-agent features.

        Columns: backlog, servable backlog, head-of-line slack, log(1 + H),
        slot phase, then the serving-link CSI norms scaled by their per-user
        peak. The first ``queue_features`` columns form the mixer state.
        Backlogs are in units of the largest request (max_packets * G_u) and
        the slack is the fraction of the deadline budget the oldest servable
        packet has left (1 when nothing is waiting), so every input stays O(1).
        """
        U, t = self.num_agents, self.t
        norms = self.channel.serving_norms(self.topo.serving_bs())
        peak = norms.max(axis=1, keepdims=True)
        csi = np.divide(norms, peak, out=np.zeros_like(norms), where=peak > 0)
        unit = self.G * self.actions.max_packets
        z = np.array([b.backlog for b in self.buffers], dtype=float) / unit
        ready = np.array([b.eligible_bits(t) for b in self.buffers], dtype=float) / unit
        budget = self.deadlines + 1.0
        head = np.array([b.head_arrival(t) for b in self.buffers])
        slack = np.where(np.isfinite(head), (budget - (t - head)) / budget, 1.0)
        phase = np.full(U, (t - 1) / self.horizon)
        return np.column_stack([z, ready, slack, np.log1p(self.H), phase, csi])

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int, episode: int = 0, phase: int = 0) -> np.ndarray:
        """Start an episode; (seed, phase, episode) fully determine its randomness."""
        self.seed = int(seed)
        place, fading, traffic = np.random.SeedSequence([self.seed, phase, episode]).spawn(3)
        self.rng_channel = np.random.default_rng(fading)
        self.rng_traffic = np.random.default_rng(traffic)
        if self.topo.ue_distances is not None:
            self.dist = np.asarray(self.topo.ue_distances, dtype=float)
        else:
            self.ue_pos = chan.place_ues(self.topo, np.random.default_rng(place))
            self.dist = chan.distances(self.topo, self.ue_pos)
        U = self.num_agents
        self.log = EventLog()
        tr = self.cfg.traffic
        self.buffers = [
            UserBuffer(u, self.packet_size, int(self.deadlines[u]), self.lam[u], self.eta[u],
                       drop_on_expiry=tr.drop_on_expiry, log=self.log)
            for u in range(U)
        ]
        self.H = np.zeros(U)
        self.records = DelayRecord(U)
        self.rr_state = RoundRobinState.initial(self.topo)
        self.slots: list[SlotRecord] = []
        self.alloc_rows: list[tuple] = []
        self.t = 1
        self.channel = chan.draw_channel(self.topo, self.rng_channel, self.dist)
        return self.observe()

    def step(self, actions=None) -> StepOutcome:
        topo, t = self.topo, self.t
        U = self.num_agents
        avoid = self.cfg.scheduler.avoid_reuse
        if self.policy == "rr_edf":
            alloc = round_robin_edf(self.rr_state, self.channel, self.buffers, topo, t, avoid)
        else:
            if actions is None or len(actions) != U:
                raise ValueError(f"expected {U} actions")
            directives = self.actions.directives(actions)
            alloc = allocate(directives, self.channel, self.buffers, topo, t, avoid)
        validate_allocation(alloc, topo)

        gamma = chan.compute_sinr(alloc, self.channel, topo)
        psi = chan.achievable_rates(gamma, topo.block_error_rate)

        Z = np.array([b.backlog for b in self.buffers], dtype=float)
        H = self.H
        served = np.zeros(U)
        dropped = np.zeros(U)
        omega = np.zeros(U, dtype=np.int64)
        arrivals = np.zeros(U, dtype=np.int64)
        for u, buf in enumerate(self.buffers):
            before = buf.backlog
            for _, d in buf.serve(psi[u], t):
                self.records.add_delay(u, d)
            served[u] = before - buf.backlog
            before = buf.backlog
            omega[u] = buf.expire(t)
            dropped[u] = before - buf.backlog
            self.records.add_violations(u, int(omega[u]))
        for u, buf in enumerate(self.buffers):
            a = int(self.rng_traffic.poisson(self.lam[u]))
            buf.enqueue(t, a)
            arrivals[u] = a
            self.records.add_arrivals(u, a)

        self.H = update_virtual_queue(H, omega, arrivals, self.eta)
        rc = self.cfg.reward
        drift = normalized_drift(Z, H, served, omega, self.G, self.lam, self.eta, rc.drift_const)
        fbar = running_jitter(self.records)
        r_lgqp = lgqp_reward(drift, fbar, rc)
        r_qpips = qpips_reward(fbar, self.records.violations, self.records.arrivals,
                               rc.violation_penalty)

        if self.record:
            self.slots.append(SlotRecord(t, Z, H.copy(), served, dropped, omega, arrivals,
                                         drift, fbar, r_lgqp if self.policy != "qpips" else r_qpips))
            planned = alloc.zeta.astype(bool)
            plan_gamma = topo.subcarrier_power * self.channel.serving_norms(
                topo.serving_bs()) ** 2 / topo.noise_power
            for u in range(U):
                fs = np.flatnonzero(planned[u])
                if fs.size:
                    self.alloc_rows.append((
                        t, u, " ".join(map(str, fs.tolist())),
                        chan.achievable_rate(plan_gamma[u, fs], topo.block_error_rate),
                        float(psi[u]),
                    ))

        done = t >= self.horizon
        self.t += 1
        self.channel = chan.draw_channel(topo, self.rng_channel, self.dist)
        reward = r_qpips if self.policy == "qpips" else r_lgqp
        return StepOutcome(self.observe(), reward, done, served, psi, omega, arrivals,
                           drift, fbar, r_lgqp, r_qpips)

    def metrics(self, total_reward: float = 0.0) -> EpisodeMetrics:
        rec = self.records
        all_delays = [d for ds in rec.delays for d in ds]
        return EpisodeMetrics(
            policy=self.policy,
            seed=self.seed,
            packet_size=self.packet_size,
            violation_ratio=violation_ratio(rec),
            jitter=jitter(rec),
            mean_delay=float(np.mean(all_delays)) if all_delays else 0.0,
            served_packets=len(all_delays),
            arrivals=rec.arrivals.copy(),
            violations=rec.violations.copy(),
            total_reward=total_reward,
        )

    # -- exports ------------------------------------------------------------

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "drift", "running_jitter_slots", "reward"])
            for s in self.slots:
                w.writerow([s.slot, repr(s.drift), repr(s.jitter), repr(s.reward)])

    def write_allocation_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "user", "subcarriers", "planned_bits", "realized_bits"])
            for row in self.alloc_rows:
                w.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4])])


def run_episode(env: SchedulingEnv, seed: int, agent=None, train: bool = False,
                episode: int = 0, phase: int = 0) -> EpisodeMetrics:
    """Play one episode.

    ``agent`` needs ``act(obs, explore) -> actions``; with ``train`` it also
    gets ``observe(obs, actions, reward, next_obs, done)`` after every slot.
    The Round-Robin EDF policy ignores the agent.
    """
    obs = env.reset(seed, episode, phase)
    total = 0.0
    while True:
        if env.policy == "rr_edf":
            actions = None
        else:
            actions = agent.act(obs, explore=train)
        out = env.step(actions)
        total += out.reward
        if train and actions is not None:
            agent.observe(obs, actions, out.reward, out.obs, out.done)
        obs = out.obs
        if out.done:
            break
    return env.metrics(total)
