"""Run orchestration shared by the CLI and the experiment scripts.

A run is one (config, seed) pair trained into its own directory::

    <out>/seed_<n>/curve.csv          per-episode learning curve
    <out>/seed_<n>/checkpoint/*.ckpt  online / target / reward networks
    <out>/seed_<n>/config.ini         canonical config
    <out>/seed_<n>/manifest.txt       hash, seed, version, timing, artifact digests

The manifest is written last and atomically, so its presence marks a
finished run.  ``train_run(..., resume=True)`` reuses a finished run whose
manifest matches the config hash, seed and code version.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .agent import LOG_FIELDS, SinglePolicyAgent, SugarlAgent, estimate_beta
from .config import ConfigError, RunConfig
from .envkit import make_env
from .evalkit import file_digest
from .pvm import ObservationPipeline

PACKAGE_DIR = Path(__file__).resolve().parent
# modules whose code determines training results
TRAINING_MODULES = ("agent.py", "diffnet.py", "envkit.py", "evalkit.py", "pvm.py", "runner.py")


def source_digest():
    """sha256 over the sources that determine training results."""
    h = hashlib.sha256()
    for name in TRAINING_MODULES:
        path = PACKAGE_DIR / name
        h.update(path.name.encode() + b"\0" + path.read_bytes() + b"\0")
    return h.hexdigest()


def version_string():
    """git-describe-like: package version plus a digest of the sources."""
    return f"{__version__}-g{source_digest()[:12]}"


# -- building blocks ----------------------------------------------------------

def build_env(cfg: RunConfig, seed):
    return make_env(cfg.env.name, dataclasses.replace(cfg.env, seed=int(seed)))


def build_pipeline(cfg: RunConfig):
    size = cfg.env.frame_size
    return ObservationPipeline(cfg.pvm.kind, cfg.pvm.steps, (size, size), cfg.agent.net_input,
                               cfg.env.frame_stack, cfg.env.peripheral)


def scripted_beta(cfg: RunConfig, episodes=5, seed=0):
    """Mean per-step return of the full-state scripted controller."""
    env = build_env(cfg, seed)
    returns, lengths = [], []
    for _ in range(episodes):
        env.reset()
        total, done = 0.0, False
        while not done:
            _, r, done = env.step(env.game.scripted_action(), 0)
            total += r
        returns.append(total)
        lengths.append(env.steps)
    return estimate_beta(returns, lengths)


def resolve_beta(cfg: RunConfig):
    """The balance scale: explicit value, else best-return / episode length.

    Games without a closed-form best return fall back to the scripted
    controller's mean per-step return.
    """
    if cfg.agent.beta != "auto":
        return float(cfg.agent.beta)
    best = build_env(cfg, 0).optimal_return()
    beta = best / cfg.env.max_episode_steps if best is not None else scripted_beta(cfg)
    if beta <= 0:
        raise ConfigError(f"agent.beta: automatic estimate {beta:.4g} is not positive; set it explicitly")
    return beta


def build_agent(cfg: RunConfig, seed, env, pipeline):
    kind = cfg.agent.kind
    common = dict(n_motor=env.n_motor, n_sensory=env.n_sensory, in_channels=pipeline.channels,
                  seed=int(seed))
    if kind == "single_policy":
        return SinglePolicyAgent(config=cfg.sugarl_config(beta=None), **common)
    if kind == "sugarl":
        beta = resolve_beta(cfg) if cfg.agent.balance and cfg.agent.reward_sign != "off" else None
        return SugarlAgent(config=cfg.sugarl_config(beta=beta), **common)
    # baseline sensory policies: motor head only, env reward only
    return SugarlAgent(config=cfg.sugarl_config(beta=None), sensory_policy=kind,
                       static_anchor=cfg.agent.static_anchor, **common)


# -- files --------------------------------------------------------------------

def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def write_manifest(path, config_hash, seed, wall_clock, artifacts, root):
    lines = [f"config_hash = {config_hash}", f"seed = {seed}", f"version = {version_string()}",
             f"wall_clock_seconds = {wall_clock:.3f}",
             f"finished_utc = {time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())}"]
    for p in artifacts:
        lines.append(f"artifact = {Path(p).relative_to(root).as_posix()} sha256:{file_digest(p)}")
    return atomic_write(path, "\n".join(lines) + "\n")


def read_manifest(path):
    out = {"artifacts": []}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition(" = ")
        if key == "artifact":
            out["artifacts"].append(value)
        else:
            out[key] = value
    return out


def read_curve(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows and Path(path).read_text().split("\n")[0].split(",") != list(LOG_FIELDS):
        raise ValueError(f"{path}: not a learning curve")
    return [{k: (int(v) if k in ("step", "episode") else float(v)) for k, v in r.items()}
            for r in rows]


# -- runs ---------------------------------------------------------------------

@dataclass
class RunResult:
    directory: Path
    seed: int
    curve: list
    reused: bool = False

    @property
    def manifest(self):
        return self.directory / "manifest.txt"

    def final_return(self, last=10):
        r = [row["return_env"] for row in self.curve[-last:]]
        return float(np.mean(r)) if r else float("nan")


def finished_run(directory, cfg: RunConfig, seed):
    """The stored result if ``directory`` holds a finished, matching run."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        return None
    meta = read_manifest(manifest)
    if (meta.get("config_hash"), meta.get("seed"), meta.get("version")) != \
            (cfg.hash(), str(seed), version_string()):
        return None
    return RunResult(directory, int(seed), read_curve(directory / "curve.csv"), reused=True)


def train_run(cfg: RunConfig, seed, directory, resume=False):
    """Train one seed into ``directory`` and write all artifacts."""
    directory = Path(directory)
    if resume:
        done = finished_run(directory, cfg, seed)
        if done is not None:
            return done
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.txt").unlink(missing_ok=True)
    start = time.time()
    env = build_env(cfg, seed)
    pipeline = build_pipeline(cfg)
    agent = build_agent(cfg, seed, env, pipeline)
    curve_path = directory / "curve.csv"
    agent.fit(env, cfg.agent.total_steps, pipeline, log_path=curve_path)
    ckpts = agent.save(directory / "checkpoint", tag=cfg.model_hash())
    cfg_path = atomic_write(directory / "config.ini", cfg.canonical())
    artifacts = [curve_path, cfg_path, *ckpts.values()]
    write_manifest(directory / "manifest.txt", cfg.hash(), seed, time.time() - start,
                   artifacts, directory)
    return RunResult(directory, int(seed), agent.history_)
