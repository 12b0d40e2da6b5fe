"""QMIX in plain numpy with hand-written backpropagation.

Agent networks are 3-layer MLPs (obs -> H -> H -> actions, ReLU), one per
agent or one shared copy. The mixer combines the chosen per-agent Q-values
through hypernetwork-generated weights made nonnegative by ``abs``::

    Q_tot = |W2(s)| . elu(q @ |W1(s)| + b1(s)) + b2(s)

where b2 comes from a two-layer state head. All arrays are float64 so the
analytic gradients can be checked against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass
class TrainerConfig:
    learning_rate: float = 5e-4
    discount: float = 0.85
    batch_size: int = 4096
    buffer_capacity: int = 50000
    target_sync: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50000
    episodes: int = 2000
    slots_per_episode: int = 50
    optimizer: str = "sgd"
    grad_clip: float = 10.0
    train_every: int = 1
    hidden: int = 64
    mixing_width: int = 32
    hypernet_hidden: int = 64
    shared_params: bool = False
    reward_shift: float = 0.0  # the learner trains on (r - reward_shift) * reward_scale
    reward_scale: float = 1.0
    mixer_state: str = "queues"  # "queues": queue features only, "full": every observation column

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be > 0")
        if self.mixer_state not in ("queues", "full"):
            raise ValueError("mixer_state must be 'queues' or 'full'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        for name in ("batch_size", "buffer_capacity", "target_sync", "episodes",
                     "slots_per_episode", "train_every", "hidden", "mixing_width",
                     "hypernet_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")

    def epsilon(self, step: int) -> float:
        """Linear decay from eps_start to eps_end over eps_decay_steps."""
        frac = min(step / max(self.eps_decay_steps, 1), 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


# -- activations --------------------------------------------------------------


def relu(x):
    return np.maximum(x, 0.0)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


# -- parameters ---------------------------------------------------------------


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(n_agents: int, obs_dim: int, n_actions: int, rng: np.random.Generator,
                hidden: int = 64, mixing_width: int = 32, hypernet_hidden: int = 64,
                shared: bool = False, state_width: int | None = None) -> dict[str, np.ndarray]:
    """Fresh agent + mixer parameters.

    Agent tensors carry a leading agent axis of size ``n_agents`` (or 1 when
    shared). ``hypernet_hidden`` sizes the hidden layer of the b2 head. The
    mixer sees the first ``state_width`` observation columns of every agent
    (all of them by default). The hypernetwork heads that emit mixing
    weights get an extra 1/sqrt(mixing_width) factor, so at initialisation
    Q_tot moves by O(1) per unit change of any agent's q. With the plain
    fan-in scale the mixer starts with a gain of about 3 per agent, which
    turns random action-value spread into a large greedy-target bias.
    """
    A = 1 if shared else n_agents
    S = n_agents * (obs_dim if state_width is None else state_width)
    M = mixing_width
    gain = 1.0 / math.sqrt(M)
    p = {
        "agent.W1": _uniform(rng, obs_dim, (A, obs_dim, hidden)),
        "agent.b1": _uniform(rng, obs_dim, (A, hidden)),
        "agent.W2": _uniform(rng, hidden, (A, hidden, hidden)),
        "agent.b2": _uniform(rng, hidden, (A, hidden)),
        "agent.W3": _uniform(rng, hidden, (A, hidden, n_actions)),
        "agent.b3": _uniform(rng, hidden, (A, n_actions)),
        "mix.hw1": _uniform(rng, S, (S, n_agents * M)) * gain,
        "mix.hw1_b": _uniform(rng, S, (n_agents * M,)) * gain,
        "mix.hb1": _uniform(rng, S, (S, M)),
        "mix.hb1_b": _uniform(rng, S, (M,)),
        "mix.hw2": _uniform(rng, S, (S, M)) * gain,
        "mix.hw2_b": _uniform(rng, S, (M,)) * gain,
        "mix.v1": _uniform(rng, S, (S, hypernet_hidden)),
        "mix.v1_b": _uniform(rng, S, (hypernet_hidden,)),
        "mix.v2": _uniform(rng, hypernet_hidden, (hypernet_hidden, 1)),
        "mix.v2_b": _uniform(rng, hypernet_hidden, (1,)),
    }
    return p


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


# -- agent networks -----------------------------------------------------------


def agent_forward(params, obs: np.ndarray, cache: bool = False):
    """Q-values for every agent and action.

    ``obs`` is (U, d) for a single step or (N, U, d) for a batch; the result
    is (U, n_actions) or (N, U, n_actions).
    """
    single = obs.ndim == 2
    x = obs[None] if single else obs
    d = params["agent.W1"].shape[1]
    if x.shape[-1] != d:
        raise ValueError(f"observation has {x.shape[-1]} features, network expects {d}")
    x = np.swapaxes(x, 0, 1)  # (U, N, d)
    z1 = x @ params["agent.W1"] + params["agent.b1"][:, None, :]
    a1 = relu(z1)
    z2 = a1 @ params["agent.W2"] + params["agent.b2"][:, None, :]
    a2 = relu(z2)
    q = a2 @ params["agent.W3"] + params["agent.b3"][:, None, :]  # (U, N, nA)
    out = np.swapaxes(q, 0, 1)
    if single:
        out = out[0]
    if cache:
        return out, (x, z1, a1, z2, a2)
    return out


def _reduce_agents(g, A):
    # shared parameters: accumulate over the agent axis
    return g.sum(axis=0, keepdims=True) if A == 1 and g.shape[0] != 1 else g


def agent_backward(params, dq: np.ndarray, mem) -> dict[str, np.ndarray]:
    """Gradients of agent parameters given dL/dQ of shape (N, U, n_actions)."""
    x, z1, a1, z2, a2 = mem
    A = params["agent.W1"].shape[0]
    g = np.swapaxes(dq, 0, 1)  # (U, N, nA)
    grads = {
        "agent.W3": np.swapaxes(a2, 1, 2) @ g,
        "agent.b3": g.sum(axis=1),
    }
    da2 = g @ np.swapaxes(params["agent.W3"], 1, 2)
    dz2 = da2 * (z2 > 0)
    grads["agent.W2"] = np.swapaxes(a1, 1, 2) @ dz2
    grads["agent.b2"] = dz2.sum(axis=1)
    da1 = dz2 @ np.swapaxes(params["agent.W2"], 1, 2)
    dz1 = da1 * (z1 > 0)
    grads["agent.W1"] = np.swapaxes(x, 1, 2) @ dz1
    grads["agent.b1"] = dz1.sum(axis=1)
    return {k: _reduce_agents(v, A) for k, v in grads.items()}


# -- mixing network -----------------------------------------------------------


def mixing_weights(params, s: np.ndarray):
    """Nonnegative first and second layer mixing weights for states s (N, S)."""
    M = params["mix.hb1"].shape[1]
    w1 = np.abs(s @ params["mix.hw1"] + params["mix.hw1_b"]).reshape(len(s), -1, M)
    w2 = np.abs(s @ params["mix.hw2"] + params["mix.hw2_b"])
    return w1, w2


def mix(params, q: np.ndarray, s: np.ndarray, cache: bool = False):
    """Q_tot for per-agent values q (N, U) and global states s (N, S)."""
    M = params["mix.hb1"].shape[1]
    N = q.shape[0]
    w1_pre = (s @ params["mix.hw1"] + params["mix.hw1_b"]).reshape(N, -1, M)
    w1 = np.abs(w1_pre)
    b1 = s @ params["mix.hb1"] + params["mix.hb1_b"]
    h_pre = np.einsum("nu,num->nm", q, w1) + b1
    h = elu(h_pre)
    w2_pre = s @ params["mix.hw2"] + params["mix.hw2_b"]
    w2 = np.abs(w2_pre)
    v_pre = s @ params["mix.v1"] + params["mix.v1_b"]
    v = relu(v_pre)
    b2 = (v @ params["mix.v2"])[:, 0] + params["mix.v2_b"][0]
    qtot = (h * w2).sum(axis=1) + b2
    if cache:
        return qtot, (q, s, w1_pre, w1, h_pre, h, w2_pre, w2, v_pre, v)
    return qtot


def mix_backward(params, dqtot: np.ndarray, mem):
    """Gradients of mixer parameters and of the agent inputs q."""
    q, s, w1_pre, w1, h_pre, h, w2_pre, w2, v_pre, v = mem
    N = q.shape[0]
    g = {}
    dw2 = dqtot[:, None] * h * np.sign(w2_pre)
    g["mix.hw2"] = s.T @ dw2
    g["mix.hw2_b"] = dw2.sum(axis=0)
    g["mix.v2"] = v.T @ dqtot[:, None]
    g["mix.v2_b"] = np.array([dqtot.sum()])
    dv = (dqtot[:, None] * params["mix.v2"][:, 0]) * (v_pre > 0)
    g["mix.v1"] = s.T @ dv
    g["mix.v1_b"] = dv.sum(axis=0)
    dh_pre = dqtot[:, None] * w2 * elu_grad(h_pre)
    g["mix.hb1"] = s.T @ dh_pre
    g["mix.hb1_b"] = dh_pre.sum(axis=0)
    dw1 = (q[:, :, None] * dh_pre[:, None, :]) * np.sign(w1_pre)
    dw1 = dw1.reshape(N, -1)
    g["mix.hw1"] = s.T @ dw1
    g["mix.hw1_b"] = dw1.sum(axis=0)
    dq = np.einsum("nm,num->nu", dh_pre, w1)
    return g, dq


# -- TD loss ------------------------------------------------------------------


def global_state(obs: np.ndarray, state_width: int | None = None) -> np.ndarray:
    """Mixer input: the first ``state_width`` columns of every agent, flattened."""
    if state_width is not None:
        obs = obs[..., :state_width]
    return obs.reshape(obs.shape[0], -1)


def td_loss(params, target_params, batch: dict, discount: float,
            state_width: int | None = None):
    """Squared TD error of Q_tot and its gradient w.r.t. every parameter.

    The bootstrap target takes each agent's greedy value under the target
    network; monotonic mixing makes that the joint argmax.
    """
    obs = batch["obs"]
    N = obs.shape[0]
    if N == 0:
        raise ValueError("empty batch")
    actions = batch["actions"]
    s = global_state(obs, state_width)
    s_next = global_state(batch["next_obs"], state_width)

    q_all, mem_a = agent_forward(params, obs, cache=True)  # (N, U, nA)
    q_chosen = np.take_along_axis(q_all, actions[:, :, None], axis=2)[:, :, 0]
    qtot, mem_m = mix(params, q_chosen, s, cache=True)

    q_next = agent_forward(target_params, batch["next_obs"]).max(axis=2)
    y = batch["rewards"] + discount * (1.0 - batch["dones"]) * mix(target_params, q_next, s_next)

    err = y - qtot
    loss = float(np.mean(err**2))
    dqtot = -2.0 * err / N
    grads, dq = mix_backward(params, dqtot, mem_m)
    dq_all = np.zeros_like(q_all)
    np.put_along_axis(dq_all, actions[:, :, None], dq[:, :, None], axis=2)
    grads.update(agent_backward(params, dq_all, mem_a))
    return loss, grads


# -- optimisation -------------------------------------------------------------


def _check_finite(grads):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {k}")


def clip_grads(grads, max_norm: float):
    if max_norm <= 0:
        return grads
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def sgd_step(params, grads, lr: float):
    """theta <- theta - lr * grad (in place; returns params)."""
    _check_finite(grads)
    for k, g in grads.items():
        params[k] -= lr * g
    return params


class Adam:
    def __init__(self, params, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return params


# -- acting -------------------------------------------------------------------


def select_actions(params, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Epsilon-greedy per agent; greedy ties go to the lowest action index."""
    q = agent_forward(params, obs)
    greedy = np.argmax(q, axis=1)
    if epsilon <= 0.0:
        return greedy
    n_agents, n_actions = q.shape
    explore = rng.random(n_agents) < epsilon
    random_actions = rng.integers(0, n_actions, size=n_agents)
    return np.where(explore, random_actions, greedy)


# -- replay -------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity ring buffer of (obs, actions, reward, next_obs, done)."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, obs, actions, reward, next_obs, done) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = actions
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size < batch_size:
            raise ValueError(f"replay holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }


# -- learner ------------------------------------------------------------------


class QmixLearner:
    """Online QMIX learner usable as the ``agent`` of ``env.run_episode``."""

    def __init__(self, n_agents: int, obs_dim: int, n_actions: int, cfg: TrainerConfig,
                 seed: int = 0, state_width: int | None = None):
        self.cfg = cfg
        self.n_agents, self.obs_dim, self.n_actions = n_agents, obs_dim, n_actions
        self.state_width = state_width
        init, explore, sample = np.random.SeedSequence(seed).spawn(3)
        self.params = init_params(n_agents, obs_dim, n_actions, np.random.default_rng(init),
                                  cfg.hidden, cfg.mixing_width, cfg.hypernet_hidden,
                                  cfg.shared_params, state_width)
        self.target = copy_params(self.params)
        self.rng_explore = np.random.default_rng(explore)
        self.rng_sample = np.random.default_rng(sample)
        self.replay = ReplayBuffer(cfg.buffer_capacity, n_agents, obs_dim)
        self.adam = Adam(self.params, cfg.learning_rate) if cfg.optimizer == "adam" else None
        self.env_steps = 0
        self.train_steps = 0
        self.losses: list[float] = []

    @property
    def epsilon(self) -> float:
        return self.cfg.epsilon(self.env_steps)

    def act(self, obs, explore: bool = False) -> np.ndarray:
        eps = self.epsilon if explore else 0.0
        return select_actions(self.params, obs, eps, self.rng_explore)

    def observe(self, obs, actions, reward, next_obs, done) -> None:
        reward = (reward - self.cfg.reward_shift) * self.cfg.reward_scale
        self.replay.push(obs, actions, reward, next_obs, done)
        self.env_steps += 1
        if (len(self.replay) >= self.cfg.batch_size
                and self.env_steps % self.cfg.train_every == 0):
            self.train_step()

    def train_step(self) -> float:
        batch = self.replay.sample(self.cfg.batch_size, self.rng_sample)
        loss, grads = td_loss(self.params, self.target, batch, self.cfg.discount,
                              self.state_width)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite TD loss at train step {self.train_steps}")
        grads = clip_grads(grads, self.cfg.grad_clip)
        if self.adam is not None:
            self.adam.step(self.params, grads)
        else:
            sgd_step(self.params, grads, self.cfg.learning_rate)
        self.train_steps += 1
        self.losses.append(loss)
        if self.train_steps % self.cfg.target_sync == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target = copy_params(self.params)

    # -- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "version": CHECKPOINT_VERSION,
            "n_agents": self.n_agents,
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "state_width": self.state_width,
            "trainer": asdict(self.cfg),
            "env_steps": self.env_steps,
            "train_steps": self.train_steps,
        }
        arrays = {k.replace(".", "__"): v for k, v in self.params.items()}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path, seed: int = 0) -> "QmixLearner":
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            params = {k.replace("__", "."): data[k].copy() for k in data.files if k != "header"}
        learner = cls(header["n_agents"], header["obs_dim"], header["n_actions"],
                      TrainerConfig(**header["trainer"]), seed, header.get("state_width"))
        for k, v in params.items():
            if learner.params[k].shape != v.shape:
                raise ValueError(f"checkpoint tensor {k} has shape {v.shape}")
        learner.params = params
        learner.target = copy_params(params)
        learner.env_steps = header["env_steps"]
        learner.train_steps = header["train_steps"]
        return learner
