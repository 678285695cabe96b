"""Run configuration: INI-style sections, typed defaults, canonical hash.

Example::

    [env]
    name = catch
    fovea = 20

    [agent]
    kind = sugarl
    total_steps = 200000

    [run]
    seeds = 1, 2, 3

Every key has a default; unknown sections or keys are rejected.  Values not
given in the file come from the preset (``desk`` or ``paper``).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .agent import NEGATIVE, OFF, POSITIVE, SEPARATE, SHARED, SugarlConfig
from .envkit import ABSOLUTE, RELATIVE, TOY_ENVS, EnvConfig
from .pvm import PVM_KINDS

AGENT_KINDS = ("sugarl", "random_view", "raster_scan", "static", "single_policy")
PRESETS = {
    "desk": {"learning_start": 5_000, "eps_decay_steps": 20_000, "net_input": 42,
             "total_steps": 200_000},
    "paper": {"learning_start": 80_000, "eps_decay_steps": 100_000, "net_input": 84,
              "total_steps": 1_000_000},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PvmSettings:
    kind: str = "stitch"
    steps: int = 3


@dataclass(frozen=True)
class AgentSettings:
    kind: str = "sugarl"
    total_steps: int = 200_000
    static_anchor: int = 5
    beta: str = "auto"  # "auto" or a number
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay_steps: int = 20_000
    learning_start: int = 5_000
    train_freq: int = 4
    target_update: int = 1_000
    batch_size: int = 32
    reward_train_freq: int = 4
    lr: float = 1e-4
    reward_lr: float = 1e-4
    buffer_size: int = 100_000
    reward_sign: str = NEGATIVE
    joint_learning: str = SHARED
    balance: bool = True
    net_input: int = 42


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 10


@dataclass(frozen=True)
class RunSettings:
    seeds: tuple = ()
    out: str = "runs"
    preset: str = "desk"


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    pvm: PvmSettings = field(default_factory=PvmSettings)
    agent: AgentSettings = field(default_factory=AgentSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def seeds(self):
        return tuple(self.run.seeds) or (self.env.seed,)

    def canonical(self):
        """Sorted ``section.key = value`` lines with LF endings."""
        lines = []
        for section in sorted(SECTIONS):
            obj = getattr(self, section)
            for f in sorted(dataclasses.fields(obj), key=lambda f: f.name):
                lines.append(f"{section}.{f.name} = {_render(getattr(obj, f.name))}\n")
        return "".join(lines)

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def model_hash(self):
        """Digest of what a trained network depends on: env, pvm and agent blocks
        (the env seed excluded)."""
        lines = [line for line in self.canonical().splitlines(keepends=True)
                 if line.split(".")[0] in ("env", "pvm", "agent")
                 and not line.startswith("env.seed ")]
        return hashlib.sha256("".join(lines).encode()).hexdigest()

    def replace(self, **sections):
        """Copy with some section fields replaced: ``replace(agent={"balance": False})``."""
        updated = {}
        for section, values in sections.items():
            updated[section] = dataclasses.replace(getattr(self, section), **values)
        cfg = dataclasses.replace(self, **updated)
        return validate(cfg)

    def sugarl_config(self, beta=None):
        a = self.agent
        names = {f.name for f in dataclasses.fields(SugarlConfig)} - {"beta"}
        return SugarlConfig(beta=beta, **{n: getattr(a, n) for n in names})


SECTIONS = {"env": EnvConfig, "pvm": PvmSettings, "agent": AgentSettings,
            "eval": EvalSettings, "run": RunSettings}


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _convert(path, raw, default, ftype):
    text = raw.strip()
    try:
        if ftype in ("bool", bool) or isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if path == "env.foveal_res":
            return None if text.lower() in ("", "none") else int(text)
        if isinstance(default, tuple) or path == "run.seeds":
            return tuple(int(v) for v in text.replace(",", " ").split())
        if isinstance(default, int):
            return int(text.replace("_", ""))
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        kind = type(default).__name__ if default is not None else "int"
        raise ConfigError(f"{path}: cannot parse {raw!r} as {kind}") from None


def parse_config(path=None, text=None, preset=None):
    """Read a run config file (or ``text``), fill defaults, validate."""
    if text is None:
        text = "" if path is None else Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    raw = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        known = {f.name for f in dataclasses.fields(SECTIONS[section])}
        for key, value in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            raw[(section, key)] = value

    chosen = preset or raw.get(("run", "preset"), "desk").strip()
    if chosen not in PRESETS:
        raise ConfigError(f"run.preset: unknown preset {chosen!r}; choose from {sorted(PRESETS)}")

    sections = {}
    for section, cls in SECTIONS.items():
        values = {}
        for f in dataclasses.fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            if section == "agent" and f.name in PRESETS[chosen]:
                default = PRESETS[chosen][f.name]
            if (section, f.name) in raw:
                values[f.name] = _convert(f"{section}.{f.name}", raw[(section, f.name)],
                                          default, f.type)
            else:
                values[f.name] = default
        sections[section] = cls(**values)
    sections["run"] = dataclasses.replace(sections["run"], preset=chosen)
    return validate(RunConfig(**sections))


def validate(cfg):
    env, pvm, agent = cfg.env, cfg.pvm, cfg.agent
    checks = [
        (env.name in TOY_ENVS, "env.name", f"must be one of {sorted(TOY_ENVS)}"),
        (env.frame_size >= 8, "env.frame_size", "must be >= 8"),
        (0 < env.fovea <= env.frame_size, "env.fovea",
         f"must lie in [1, env.frame_size={env.frame_size}]"),
        (env.foveal_res is None or env.foveal_res >= 1, "env.foveal_res", "must be positive"),
        (env.peripheral_res >= 1, "env.peripheral_res", "must be positive"),
        (env.control_mode in (ABSOLUTE, RELATIVE), "env.control_mode",
         f"must be {ABSOLUTE!r} or {RELATIVE!r}"),
        (env.max_episode_steps >= 1, "env.max_episode_steps", "must be >= 1"),
        (env.action_repeat >= 1, "env.action_repeat", "must be >= 1"),
        (env.frame_stack >= 1, "env.frame_stack", "must be >= 1"),
        (pvm.kind in PVM_KINDS, "pvm.kind", f"must be one of {PVM_KINDS}"),
        (pvm.steps >= 1, "pvm.steps", "must be >= 1"),
        (agent.kind in AGENT_KINDS, "agent.kind", f"must be one of {AGENT_KINDS}"),
        (agent.total_steps >= 1, "agent.total_steps", "must be >= 1"),
        (0 <= agent.static_anchor < 16, "agent.static_anchor", "must lie in [0, 16)"),
        (0 < agent.gamma < 1, "agent.gamma", "must lie in (0, 1)"),
        (0 <= agent.eps_end <= agent.eps_start <= 1, "agent.eps_start",
         "need 0 <= eps_end <= eps_start <= 1"),
        (agent.reward_sign in (NEGATIVE, POSITIVE, OFF), "agent.reward_sign",
         f"must be one of {NEGATIVE}, {POSITIVE}, {OFF}"),
        (agent.joint_learning in (SHARED, SEPARATE), "agent.joint_learning",
         f"must be {SHARED!r} or {SEPARATE!r}"),
        (agent.net_input >= 36, "agent.net_input", "must be >= 36 for the conv encoder"),
        (cfg.eval.episodes >= 1, "eval.episodes", "must be >= 1"),
    ]
    for name in ("eps_decay_steps", "train_freq", "target_update", "batch_size",
                 "reward_train_freq", "buffer_size"):
        checks.append((getattr(agent, name) >= 1, f"agent.{name}", "must be >= 1"))
    checks.append((agent.learning_start >= 0, "agent.learning_start", "must be >= 0"))
    for ok, key, msg in checks:
        if not ok:
            raise ConfigError(f"{key}: {msg}")
    if agent.beta != "auto":
        try:
            beta = float(agent.beta)
        except ValueError:
            raise ConfigError("agent.beta: must be 'auto' or a number") from None
        if beta < 0:
            raise ConfigError("agent.beta: must be non-negative")
    if agent.kind in ("raster_scan", "static") and env.control_mode != ABSOLUTE:
        raise ConfigError(f"agent.kind: {agent.kind} needs env.control_mode = absolute")
    return cfg
