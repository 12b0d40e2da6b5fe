"""Experiment configuration: YAML file -> validated dataclasses.

Omitted keys take the defaults below (the reference simulation setup);
unknown keys are rejected. Any key can be overridden from the environment
as ``LGQP__<section>__<key>=<yaml value>``, e.g.
``LGQP__trainer__episodes=300``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .channel import TopologyConfig
from .lyapunov import RewardConfig
from .qmix import TrainerConfig

ENV_PREFIX = "LGQP__"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


@dataclass
class TrafficConfig:
    packet_sizes: list = field(default_factory=lambda: [28, 40, 52, 64, 76])
    arrival_rate: float | list = 3.0
    deadlines: list = field(default_factory=lambda: [5, 2, 5, 3, 2, 2])
    violation_bound: float | list = 0.01
    drop_on_expiry: bool = True

    def __post_init__(self):
        if not self.packet_sizes:
            raise ValueError("packet_sizes: sweep list must be nonempty")
        if any(int(g) <= 0 for g in self.packet_sizes):
            raise ValueError("packet_sizes must be positive")
        if any(int(d) < 1 for d in self.deadlines):
            raise ValueError("deadlines must be >= 1 slot")
        for eta in _as_list(self.violation_bound):
            if not 0.0 < float(eta) < 1.0:
                raise ValueError("violation_bound: probability out of range")
        if any(float(x) < 0 for x in _as_list(self.arrival_rate)):
            raise ValueError("arrival_rate must be >= 0")

    def arrival_rates(self, n: int) -> list[float]:
        return _broadcast(self.arrival_rate, n, "arrival_rate")

    def violation_bounds(self, n: int) -> list[float]:
        return _broadcast(self.violation_bound, n, "violation_bound")


@dataclass
class SchedulerConfig:
    num_priorities: int = 3
    max_packets: int = 7
    avoid_reuse: bool = True

    def __post_init__(self):
        if self.num_priorities < 1 or self.max_packets < 1:
            raise ValueError("num_priorities and max_packets must be >= 1")


@dataclass
class RunConfig:
    seeds: int = 3
    eval_episodes: int = 100
    policies: list = field(default_factory=lambda: ["lgqp", "qpips", "rr_edf"])

    def __post_init__(self):
        if self.seeds < 1 or self.eval_episodes < 1:
            raise ValueError("seeds and eval_episodes must be >= 1")
        bad = set(self.policies) - {"lgqp", "qpips", "rr_edf"}
        if bad:
            raise ValueError(f"unknown policies {sorted(bad)}")


@dataclass
class ExperimentConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        U = self.topology.num_ues
        if len(self.traffic.deadlines) != U:
            raise ValueError(f"traffic.deadlines: expected {U} entries, got {len(self.traffic.deadlines)}")
        self.traffic.arrival_rates(U)
        self.traffic.violation_bounds(U)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _broadcast(x, n, name):
    vals = [float(v) for v in _as_list(x)]
    if len(vals) == 1:
        return vals * n
    if len(vals) != n:
        raise ValueError(f"{name}: expected 1 or {n} entries, got {len(vals)}")
    return vals


SECTIONS = {
    "topology": TopologyConfig,
    "traffic": TrafficConfig,
    "scheduler": SchedulerConfig,
    "reward": RewardConfig,
    "trainer": TrainerConfig,
    "run": RunConfig,
}


def _build_section(name, cls, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
    kwargs = {}
    for key, value in data.items():
        default = known[key].default
        allows_list = "list" in str(known[key].type)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key}: expected true/false")
        elif isinstance(default, (int, float)) and not (allows_list and isinstance(value, list)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key}: expected a number")
            if isinstance(default, float):
                value = float(value)
            elif float(value).is_integer():
                value = int(value)
            else:
                raise ConfigError(f"{name}.{key}: expected an integer")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def from_dict(data: dict | None, env: dict | None = None) -> ExperimentConfig:
    data = dict(data or {})
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(f"{key}: unknown section")
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for var, raw in sorted((env or {}).items()):
        if not var.startswith(ENV_PREFIX):
            continue
        parts = var[len(ENV_PREFIX):].split("__")
        if len(parts) != 2 or parts[0] not in SECTIONS:
            raise ConfigError(f"{var}: expected {ENV_PREFIX}<section>__<key>")
        data.setdefault(parts[0], {})
        if data[parts[0]] is None:
            data[parts[0]] = {}
        data[parts[0]][parts[1]] = yaml.safe_load(raw)
    sections = {name: _build_section(name, cls, data.get(name)) for name, cls in SECTIONS.items()}
    try:
        return ExperimentConfig(**sections)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path=None, env: dict | None = None) -> ExperimentConfig:
    """Load a YAML config file (None -> all defaults) plus env overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("top level: expected a mapping")
    return from_dict(data, os.environ if env is None else env)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
