"""Command-line entry point.

Subcommands::

    avrl train     --config run.ini [--seed N ...] [--out DIR] [--preset desk|paper]
    avrl eval      --config run.ini --checkpoint DIR [--seed N ...] [--out DIR]
    avrl analyze   TRACE.csv ... --out DIR
    avrl ablate    --config run.ini [--axis reward|joint|pvm|balance ...] [--seed N ...] [--out DIR]
    avrl gradcheck [--out DIR]
    avrl bench     [--config run.ini] [--out DIR]

Every command writes only below ``--out`` (default: ``run.out`` from the
config) and exits 0 only if all requested work finished.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import diffnet
from .config import ConfigError, RunConfig, parse_config
from .evalkit import SensoryTrace, run_eval, sensory_heatmap, sensory_kl, write_pgm
from .runner import (atomic_write, build_agent, build_env, build_pipeline, train_run,
                     write_manifest)

# incremental rows of the ablation table: (label, axis, field, value)
ABLATION_STEPS = (
    ("+positive reward", "reward", ("agent", "reward_sign"), "positive"),
    ("+joint learning", "joint", ("agent", "joint_learning"), "shared"),
    ("negative reward", "reward", ("agent", "reward_sign"), "negative"),
    ("+PVM", "pvm", ("pvm", "kind"), "stitch"),
    ("+balance", "balance", ("agent", "balance"), True),
)
ABLATION_BASE = {"reward": ("agent", "reward_sign", "off"),
                 "joint": ("agent", "joint_learning", "separate"),
                 "pvm": ("pvm", "kind", "off"),
                 "balance": ("agent", "balance", False)}
AXES = tuple(ABLATION_BASE)


class CliError(Exception):
    pass


def _load_config(args):
    cfg = parse_config(args.config, preset=args.preset) if args.config else \
        parse_config(text="", preset=args.preset)
    if args.seed:
        cfg = cfg.replace(run={"seeds": tuple(args.seed)})
    return cfg


def _out_dir(args, cfg=None):
    return Path(args.out or (cfg.run.out if cfg else "runs"))


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


# -- train --------------------------------------------------------------------

def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    for seed in cfg.seeds:
        t = time.time()
        result = train_run(cfg, seed, out / f"seed_{seed}")
        print(f"seed {seed}: {len(result.curve)} episodes, final-10 return "
              f"{result.final_return():.3f}, {time.time() - t:.1f}s -> {result.directory}")
    return 0


# -- eval ---------------------------------------------------------------------

def _checkpoint_agent(cfg, checkpoint):
    """Build the agent for ``cfg`` and load ``checkpoint``; validates before any output."""
    checkpoint = Path(checkpoint)
    if not checkpoint.is_dir():
        raise CliError(f"checkpoint directory not found: {checkpoint}")
    env = build_env(cfg, cfg.seeds[0])
    pipeline = build_pipeline(cfg)
    agent = build_agent(cfg, cfg.seeds[0], env, pipeline)
    agent.initialize()
    for name, net in agent.networks().items():
        path = checkpoint / f"{name}.ckpt"
        if not path.exists():
            raise CliError(f"missing checkpoint file {path}")
        if diffnet.read_checkpoint_hash(path) != net.spec_hash(cfg.model_hash()):
            raise CliError(f"{path}: network spec does not match the config "
                           f"(config hash {cfg.hash()[:12]})")
    agent.load(checkpoint, tag=cfg.model_hash())
    return agent


def evaluation_seed(seed):
    """Evaluation environments use seeds disjoint from the training ones."""
    return 10_000 + int(seed)


def cmd_eval(args):
    cfg = _load_config(args)
    if not args.checkpoint:
        raise CliError("eval needs --checkpoint DIR")
    agent = _checkpoint_agent(cfg, args.checkpoint)
    start = time.time()
    report, trace = run_eval(agent, lambda s: build_env(cfg, evaluation_seed(s)),
                             cfg.eval.episodes, list(cfg.seeds),
                             make_pipeline=lambda: build_pipeline(cfg), config_hash=cfg.hash())
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    report_path = report.to_csv(out / "eval.csv")
    trace_path = out / "trace.csv"
    trace.save(trace_path)
    summary_path = atomic_write(out / "summary.txt", report.summary() + "\n")
    write_manifest(out / "manifest.txt", cfg.hash(), ",".join(map(str, cfg.seeds)),
                   time.time() - start, [report_path, trace_path, summary_path], out)
    print(report.summary())
    return 0


# -- analyze ------------------------------------------------------------------

def cmd_analyze(args):
    if not args.traces:
        raise CliError("analyze needs at least one trace file")
    traces = []
    for path in args.traces:
        path = Path(path)
        if not path.exists():
            raise CliError(f"trace file not found: {path}")
        traces.append((path, SensoryTrace.load(path)))
    out = Path(args.out or "analysis")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (path, trace) in enumerate(traces):
        stem = f"{i:02d}_{path.stem}"
        write_pgm(out / f"{stem}_heatmap.pgm", sensory_heatmap(trace))
        hist = trace.histogram()
        with open(out / f"{stem}_histogram.csv", "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(["action", "count"])
            w.writerows(enumerate(hist.tolist()))
        kl = sensory_kl(hist)
        rows.append([stem, str(path), len(trace.actions), repr(kl)])
        print(f"{path}: {len(trace.actions)} steps, KL to uniform {kl:.4f} nats")
    with open(out / "kl.csv", "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["name", "trace", "steps", "kl_nats"])
        w.writerows(rows)
    return 0


# -- ablate -------------------------------------------------------------------

def ablation_rows(cfg: RunConfig, axes=AXES):
    """Incremental configs: base (listed axes switched off) then one change per row."""
    for axis in axes:
        if axis not in ABLATION_BASE:
            raise CliError(f"unknown ablation axis {axis!r}; choose from {AXES}")
    base = {"agent": {"kind": "sugarl"}}
    for axis in axes:
        section, key, value = ABLATION_BASE[axis]
        base.setdefault(section, {})[key] = value
    current = cfg.replace(**base)
    rows = [("base", current)]
    for label, axis, (section, key), value in ABLATION_STEPS:
        if axis in axes:
            current = current.replace(**{section: {key: value}})
            rows.append((label, current))
    return rows


def cmd_ablate(args):
    cfg = _load_config(args)
    axes = tuple(args.axis) if args.axis else AXES
    out = _out_dir(args, cfg)
    table = []
    for i, (label, row_cfg) in enumerate(ablation_rows(cfg, axes)):
        finals = []
        for seed in row_cfg.seeds:
            result = train_run(row_cfg, seed, out / f"row{i}" / f"seed_{seed}", resume=True)
            finals.append(result.final_return())
        a = row_cfg.agent
        table.append([i, label, a.reward_sign, a.joint_learning, row_cfg.pvm.kind,
                      str(a.balance).lower(), len(finals), repr(float(np.mean(finals))),
                      " ".join(repr(f) for f in finals), row_cfg.hash()[:12]])
        print(f"{label:>18}: mean final-10 return {np.mean(finals):.3f}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["row", "label", "reward_sign", "joint_learning", "pvm", "balance",
                    "n_seeds", "mean_final_return", "per_seed", "config_hash"])
        w.writerows(table)
    return 0


# -- gradcheck / bench --------------------------------------------------------

def cmd_gradcheck(args):
    reports = diffnet.gradcheck_suite(seed=args.seed[0] if args.seed else 0)
    ok = True
    for name, rep in reports:
        ok &= rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'} {name}: max rel error {rep.max_rel_error:.2e} "
              f"over {rep.n_checked} params (worst {rep.worst})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gradcheck.csv", "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(["check", "max_rel_error", "n_checked", "kink_skipped", "passed"])
            for name, rep in reports:
                w.writerow([name, repr(rep.max_rel_error), rep.n_checked, rep.n_kink_skipped,
                            str(rep.passed).lower()])
    return 0 if ok else 1


def cmd_bench(args, n_updates=50, n_steps=500):
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    env = build_env(cfg, seed)
    pipeline = build_pipeline(cfg)
    agent = build_agent(cfg, seed, env, pipeline)
    agent.initialize()
    rng = np.random.default_rng(seed)
    obs = pipeline.reset(env.reset())
    t = time.perf_counter()
    for _ in range(n_steps):
        a_s, a_o = int(rng.integers(env.n_motor)), int(rng.integers(env.n_sensory))
        packet, r, done = env.step(a_s, a_o)
        nxt = pipeline.observe(packet)
        agent.replay_.add(obs, a_s, a_o, r, nxt, done)
        obs = pipeline.reset(env.reset()) if done else nxt
    env_ms = (time.perf_counter() - t) / n_steps * 1e3
    t = time.perf_counter()
    for _ in range(n_updates):
        agent.learn(agent.replay_.sample(cfg.agent.batch_size))
    update_ms = (time.perf_counter() - t) / n_updates * 1e3
    per_step = env_ms + update_ms / cfg.agent.train_freq
    est_min = per_step * cfg.agent.total_steps / 6e4
    print(f"env+pipeline {env_ms:.2f} ms/step, update {update_ms:.2f} ms, "
          f"estimated {est_min:.1f} min for {cfg.agent.total_steps} steps")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(["env_ms_per_step", "update_ms", "estimated_minutes", "config_hash"])
            w.writerow([repr(env_ms), repr(update_ms), repr(est_min), cfg.hash()])
    return 0


# -- entry --------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="avrl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", type=Path, help="run config file (INI)")
            p.add_argument("--preset", choices=("desk", "paper"), default=None)
        p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
        p.add_argument("--out", type=Path, help="output directory")
        return p

    p = common(sub.add_parser("train", help="train agents, one run per seed"))
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="greedy evaluation of a checkpoint"))
    p.add_argument("--checkpoint", type=Path)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("analyze", help="gaze heatmaps and KL from sensory traces")
    p.add_argument("traces", nargs="*", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_analyze)
    p = common(sub.add_parser("ablate", help="incremental ablation table"))
    p.add_argument("--axis", action="append", choices=AXES)
    p.set_defaults(func=cmd_ablate)
    p = common(sub.add_parser("gradcheck", help="finite-difference gradient checks"), config=False)
    p.set_defaults(func=cmd_gradcheck)
    p = common(sub.add_parser("bench", help="time environment steps and updates"))
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CliError, diffnet.CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
