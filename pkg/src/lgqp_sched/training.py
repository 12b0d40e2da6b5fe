"""Training and evaluation drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .env import EpisodeMetrics, SchedulingEnv, run_episode
from .qmix import QmixLearner

log = logging.getLogger(__name__)

TRAIN_PHASE = 0
EVAL_PHASE = 1


@dataclass
class EpisodeCurve:
    episode: int
    epsilon: float
    mean_loss: float
    reward: float
    violation_pct: float
    jitter: float


def make_learner(cfg: ExperimentConfig, env: SchedulingEnv, seed: int) -> QmixLearner:
    width = env.queue_features if cfg.trainer.mixer_state == "queues" else None
    return QmixLearner(env.num_agents, env.obs_dim, env.actions.size, cfg.trainer, seed, width)


def train(cfg: ExperimentConfig, packet_size: int, policy: str, seed: int,
          episodes: int | None = None, learner: QmixLearner | None = None,
          on_episode=None) -> tuple[QmixLearner, list[EpisodeCurve]]:
    """Train a QMIX scheduler (``lgqp`` or ``qpips`` reward) for one packet size."""
    if policy == "rr_edf":
        raise ValueError("rr_edf has nothing to train")
    env = SchedulingEnv(cfg, packet_size, policy)
    learner = learner or make_learner(cfg, env, seed)
    episodes = cfg.trainer.episodes if episodes is None else episodes
    curves = []
    for ep in range(episodes):
        eps = learner.epsilon
        n_losses = len(learner.losses)
        m = run_episode(env, seed, learner, train=True, episode=ep, phase=TRAIN_PHASE)
        new = learner.losses[n_losses:]
        curve = EpisodeCurve(ep, eps, float(np.mean(new)) if new else float("nan"),
                             m.total_reward, 100.0 * m.mean_violation_ratio, m.jitter)
        curves.append(curve)
        if on_episode is not None:
            on_episode(curve, learner)
        if ep % 50 == 0:
            log.info("G=%d %s seed=%d ep=%d eps=%.3f reward=%.2f viol=%.2f%% jitter=%.3f",
                     packet_size, policy, seed, ep, eps, m.total_reward, curve.violation_pct,
                     m.jitter)
    return learner, curves


def evaluate(cfg: ExperimentConfig, packet_size: int, policy: str, seed: int,
             learner: QmixLearner | None = None, episodes: int | None = None) -> list[EpisodeMetrics]:
    """Greedy roll-outs on the evaluation seeds (shared by every policy)."""
    if policy != "rr_edf" and learner is None:
        raise ValueError(f"policy {policy} needs a trained model")
    env = SchedulingEnv(cfg, packet_size, policy)
    n = cfg.run.eval_episodes if episodes is None else episodes
    return [run_episode(env, seed, learner, train=False, episode=i, phase=EVAL_PHASE)
            for i in range(n)]


@dataclass
class Summary:
    violation_ratio: np.ndarray  # per user, pooled over episodes
    jitter: float  # mean of per-episode jitter, slots
    mean_delay: float
    served_packets: int

    @property
    def mean_violation_ratio(self) -> float:
        return float(np.mean(self.violation_ratio))


def summarize(metrics: list[EpisodeMetrics]) -> Summary:
    viol = np.sum([m.violations for m in metrics], axis=0).astype(float)
    arr = np.sum([m.arrivals for m in metrics], axis=0).astype(float)
    ratio = np.divide(viol, arr, out=np.zeros_like(viol), where=arr > 0)
    served = int(sum(m.served_packets for m in metrics))
    delay = (sum(m.mean_delay * m.served_packets for m in metrics) / served) if served else 0.0
    return Summary(ratio, float(np.mean([m.jitter for m in metrics])), float(delay), served)
