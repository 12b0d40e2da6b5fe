"""Command-line experiment runner.

    lgqp-sched train  --config cfg.yaml --seed 0 --policy lgqp   --out runs/
    lgqp-sched eval   --config cfg.yaml --seed 0 --policy rr_edf --out runs/
    lgqp-sched sweep  --config cfg.yaml --seed 0 --out runs/
    lgqp-sched defaults

Training seed ``k`` of a run is ``--seed + k`` for ``k < run.seeds``; every
random stream (placement, fading, traffic, initialisation, exploration,
replay sampling) is derived from it. Exit codes: 0 ok, 1 configuration
error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, dump_config, parse_config
from .env import POLICIES, SchedulingEnv, run_episode
from .qmix import QmixLearner, copy_params
from .training import EVAL_PHASE, evaluate, summarize, train

log = logging.getLogger("lgqp_sched")

CURVE_HEADER = ["episode", "epsilon", "mean_td_loss", "episode_reward",
                "violation_pct", "jitter_slots"]


class RuntimeAbort(RuntimeError):
    """A run had to stop (non-finite loss, missing checkpoint, ...)."""


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly, which keeps CSVs byte-stable
    return repr(float(x))


def seeds_of(cfg: ExperimentConfig, base: int) -> list[int]:
    return [base + k for k in range(cfg.run.seeds)]


def packet_sizes_of(cfg: ExperimentConfig, only: int | None) -> list[int]:
    return [int(only)] if only is not None else [int(g) for g in cfg.traffic.packet_sizes]


def checkpoint_path(out: Path, policy: str, G: int, seed: int) -> Path:
    return out / f"model_{policy}_G{G}_seed{seed}.npz"


def metric_header(n_users: int) -> list[str]:
    return (["policy", "seed", "packet_size_bits"]
            + [f"violation_u{u}_pct" for u in range(n_users)]
            + ["mean_violation_pct", "jitter_slots", "mean_delay_slots"])


def metric_row(policy: str, seed: int, G: int, summary) -> list[str]:
    return ([policy, str(seed), str(G)]
            + [_fmt(100.0 * v) for v in summary.violation_ratio]
            + [_fmt(100.0 * summary.mean_violation_ratio), _fmt(summary.jitter),
               _fmt(summary.mean_delay)])


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- jobs -----------------------------------------------------------------------


def train_job(cfg: ExperimentConfig, G: int, policy: str, seed: int, out: Path) -> Path:
    """Train one model, write its checkpoint and curve CSV, return the checkpoint path."""
    ckpt = checkpoint_path(out, policy, G, seed)
    good: dict = {}
    curves = []

    def on_episode(curve, learner):
        # snapshot after every finished episode so an abort can fall back to it
        curves.append(curve)
        good.update(learner=learner, params=copy_params(learner.params),
                    state=(learner.env_steps, learner.train_steps))

    try:
        learner, _ = train(cfg, G, policy, seed, on_episode=on_episode)
    except FloatingPointError as exc:
        if "learner" in good:
            learner = good["learner"]
            learner.params = good["params"]
            learner.env_steps, learner.train_steps = good["state"]
            learner.save(ckpt)
        _write_curves(out, policy, G, seed, curves)
        raise RuntimeAbort(f"G={G} seed={seed}: {exc}; last good checkpoint in {ckpt}") from None
    learner.save(ckpt)
    _write_curves(out, policy, G, seed, curves)
    return ckpt


def _write_curves(out: Path, policy: str, G: int, seed: int, curves) -> None:
    rows = [[str(c.episode), _fmt(c.epsilon), _fmt(c.mean_loss), _fmt(c.reward),
             _fmt(c.violation_pct), _fmt(c.jitter)] for c in curves]
    write_csv(out / f"curves_{policy}_G{G}_seed{seed}.csv", CURVE_HEADER, rows)


def eval_job(cfg: ExperimentConfig, G: int, policy: str, seed: int, out: Path,
             ckpt_dir: Path, events: bool = False) -> list[str]:
    learner = None
    if policy != "rr_edf":
        ckpt = checkpoint_path(ckpt_dir, policy, G, seed)
        if not ckpt.exists():
            raise RuntimeAbort(f"missing checkpoint {ckpt}")
        learner = QmixLearner.load(ckpt, seed)
    metrics = evaluate(cfg, G, policy, seed, learner)
    if events:
        env = SchedulingEnv(cfg, G, policy, record=True)
        run_episode(env, seed, learner, train=False, episode=0, phase=EVAL_PHASE)
        stem = f"{policy}_G{G}_seed{seed}"
        env.log.write_csv(out / f"events_{stem}.csv")
        env.write_trace_csv(out / f"trace_{stem}.csv")
        env.write_allocation_csv(out / f"alloc_{stem}.csv")
    return metric_row(policy, seed, G, summarize(metrics))


def _run_jobs(fn, jobs, workers: int):
    """Run jobs serially or in worker processes; results keep job order."""
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


# -- commands -------------------------------------------------------------------


def cmd_train(cfg, args) -> None:
    if args.policy == "rr_edf":
        raise ConfigError("policy: rr_edf is not trainable")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, G, args.policy, s, out)
            for G in packet_sizes_of(cfg, args.packet_size) for s in seeds_of(cfg, args.seed)]
    for path in _run_jobs(train_job, jobs, args.workers):
        log.info("wrote %s", path)


def cmd_eval(cfg, args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = Path(args.checkpoint_dir) if args.checkpoint_dir else out
    jobs = [(cfg, G, args.policy, s, out, ckpt_dir, args.events)
            for G in packet_sizes_of(cfg, args.packet_size) for s in seeds_of(cfg, args.seed)]
    rows = _run_jobs(eval_job, jobs, args.workers)
    path = out / f"metrics_{args.policy}.csv"
    write_csv(path, metric_header(cfg.topology.num_ues), rows)
    return path


def cmd_sweep(cfg, args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = packet_sizes_of(cfg, args.packet_size)
    seeds = seeds_of(cfg, args.seed)
    policies = sorted(cfg.run.policies if args.policy is None else [args.policy])
    trainable = [(cfg, G, p, s, out) for p in policies if p != "rr_edf"
                 for G in sizes for s in seeds]
    _run_jobs(train_job, trainable, args.workers)
    jobs = [(cfg, G, p, s, out, out, args.events) for p in policies for G in sizes for s in seeds]
    rows = _run_jobs(eval_job, jobs, args.workers)
    path = out / "sweep.csv"
    write_csv(path, metric_header(cfg.topology.num_ues), rows)
    write_figure_tables(out, rows, cfg.topology.num_ues)
    return path


def write_figure_tables(out: Path, rows, n_users: int) -> None:
    """Plot-ready tables: x = packet size, one mean/std column pair per policy."""
    viol_col = 3 + n_users
    jit_col = viol_col + 1
    policies = sorted({r[0] for r in rows})
    sizes = sorted({int(r[2]) for r in rows})
    for name, col, unit in (("violation", viol_col, "pct"), ("jitter", jit_col, "slots")):
        header = ["packet_size_bits"]
        for p in policies:
            header += [f"{p}_mean_{unit}", f"{p}_std_{unit}"]
        table = []
        for G in sizes:
            line = [str(G)]
            for p in policies:
                vals = [float(r[col]) for r in rows if r[0] == p and int(r[2]) == G]
                line += [_fmt(np.mean(vals)), _fmt(np.std(vals))] if vals else ["nan", "nan"]
            table.append(line)
        write_csv(out / f"figure_{name}.csv", header, table)


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgqp-sched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("train", "train QMIX schedulers"),
                           ("eval", "evaluate a policy on the shared evaluation seeds"),
                           ("sweep", "train and evaluate every policy over the packet sizes")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--config", default=None, help="YAML config (omit for defaults)")
        c.add_argument("--seed", type=int, default=0, help="base seed")
        c.add_argument("--policy", choices=POLICIES, default=None if name == "sweep" else "lgqp")
        c.add_argument("--out", default="runs", help="output directory")
        c.add_argument("--packet-size", type=int, default=None,
                       help="run a single packet size instead of the configured list")
        c.add_argument("--workers", type=int, default=1, help="worker processes")
        if name != "train":
            c.add_argument("--events", action="store_true",
                           help="also dump event log, reward trace and allocations")
        if name == "eval":
            c.add_argument("--checkpoint-dir", default=None,
                           help="where trained models live (default: --out)")
    d = sub.add_parser("defaults", help="print the default config as YAML")
    d.add_argument("--config", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "defaults":
            sys.stdout.write(dump_config(cfg))
        elif args.command == "train":
            cmd_train(cfg, args)
        elif args.command == "eval":
            print(cmd_eval(cfg, args))
        else:
            print(cmd_sweep(cfg, args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeAbort, FloatingPointError, ValueError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
