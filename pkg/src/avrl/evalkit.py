"""Baseline sensory policies, evaluation statistics and gaze analysis."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envkit import GRID, anchor_position

N_ANCHORS = GRID * GRID
RANDOM_VIEW, RASTER_SCAN, STATIC = "random_view", "raster_scan", "static"
# static views used as baselines; centre is the upper-left of the four central anchors
STATIC_ANCHORS = {"center": 5, "upper_left": 0, "bottom_right": 15}


class BaselinePolicy:
    """Hand-designed sensory policy over the anchor grid.

    ``random_view`` samples anchors uniformly, ``raster_scan`` sweeps them
    left to right, top to bottom, ``static`` always returns one anchor.
    """

    def __init__(self, kind=RANDOM_VIEW, anchor=0, n_actions=N_ANCHORS, seed=0):
        if kind not in (RANDOM_VIEW, RASTER_SCAN, STATIC):
            raise ValueError(f"unknown baseline {kind!r}")
        if isinstance(anchor, str):
            anchor = STATIC_ANCHORS[anchor]
        if kind in (RASTER_SCAN, STATIC) and n_actions != N_ANCHORS:
            raise ValueError(f"{kind} needs absolute control with {N_ANCHORS} anchors")
        if not 0 <= anchor < n_actions:
            raise ValueError(f"anchor {anchor} outside [0, {n_actions})")
        self.kind = kind
        self.anchor = anchor
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)

    def action(self, step):
        if self.kind == RANDOM_VIEW:
            return int(self.rng.integers(self.n_actions))
        if self.kind == RASTER_SCAN:
            return step % N_ANCHORS
        return self.anchor


def baseline_sensory_action(policy, step):
    return policy.action(step)


def nearest_center_anchors(frame_shape, fovea_size):
    """Anchors whose fovea centre is closest to the frame centre (ties kept)."""
    H, W = frame_shape
    h, w = fovea_size
    dists = []
    for k in range(N_ANCHORS):
        x, y = anchor_position(k, frame_shape, fovea_size)
        dists.append(math.hypot(x + h / 2 - H / 2, y + w / 2 - W / 2))
    best = min(dists)
    return [k for k, d in enumerate(dists) if d <= best + 1e-9]


# -- statistics ---------------------------------------------------------------

def iqm(values):
    """Interquartile mean: drop floor(n/4) values from each end, average the rest."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size < 4:
        raise ValueError(f"IQM needs at least 4 values, got {v.size}")
    cut = v.size // 4
    return float(v[cut:v.size - cut].mean())


def normalized_score(returns, reference_returns):
    ref = np.asarray(reference_returns, dtype=float)
    if ref.size and ref.min() < 0 < ref.max():
        raise ValueError("reference returns have mixed signs; normalization is ill-defined")
    ref_iqm = iqm(ref)
    if ref_iqm == 0:
        raise ValueError("reference IQM is zero")
    return iqm(returns) / ref_iqm


# -- gaze analysis ------------------------------------------------------------

@dataclass
class SensoryTrace:
    frame_shape: tuple[int, int]
    rects: list = field(default_factory=list)  # (x, y, h, w) per step
    actions: list = field(default_factory=list)  # sensory action per step
    n_actions: int = N_ANCHORS

    def add(self, rect, action):
        self.rects.append(tuple(int(v) for v in rect))
        self.actions.append(int(action))

    def extend(self, other):
        self.rects.extend(other.rects)
        self.actions.extend(other.actions)

    def histogram(self):
        return np.bincount(np.asarray(self.actions, dtype=int), minlength=self.n_actions)

    def save(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame_h", "frame_w", "n_actions"])
            w.writerow([*self.frame_shape, self.n_actions])
            w.writerow(["x", "y", "h", "w", "action"])
            for rect, a in zip(self.rects, self.actions):
                w.writerow([*rect, a])

    @classmethod
    def load(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3 or rows[0] != ["frame_h", "frame_w", "n_actions"]:
            raise ValueError(f"{path}: not a sensory trace file")
        fh_, fw, n = map(int, rows[1])
        trace = cls((fh_, fw), n_actions=n)
        for row in rows[3:]:
            *rect, a = map(int, row)
            trace.add(rect, a)
        return trace


def sensory_heatmap(trace):
    """Per-pixel count of steps whose observable area covered the pixel."""
    if not trace.rects:
        raise ValueError("empty trace")
    counts = np.zeros(trace.frame_shape, dtype=np.int64)
    for x, y, h, w in trace.rects:
        counts[x:x + h, y:y + w] += 1
    return counts


def sensory_kl(histogram):
    """KL(p || uniform) in nats for an action-count histogram."""
    counts = np.asarray(histogram, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram is empty")
    p = counts / total
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] * counts.size)))


def write_pgm(path, counts):
    """Binary P5 graymap, scaled so the maximum count maps to 255."""
    counts = np.asarray(counts, dtype=float)
    peak = counts.max()
    img = np.zeros(counts.shape, dtype=np.uint8) if peak <= 0 else \
        np.rint(counts / peak * 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvalReport:
    returns: list
    seeds: list
    config_hash: str = ""
    reference_iqm: float | None = None

    @property
    def iqm(self):
        return iqm(self.returns)

    @property
    def mean(self):
        return float(np.mean(self.returns))

    @property
    def normalized_score(self):
        if not self.reference_iqm:
            return None
        return self.iqm / self.reference_iqm

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "episode", "return"])
            per_seed = len(self.returns) // max(len(self.seeds), 1)
            for i, r in enumerate(self.returns):
                w.writerow([self.seeds[i // per_seed], i % per_seed, repr(float(r))])
        return path

    def summary(self):
        norm = self.normalized_score
        line = f"episodes={len(self.returns)} mean={self.mean:.4f}"
        if len(self.returns) >= 4:
            line += f" iqm={self.iqm:.4f}"
        if norm is not None:
            line += f" normalized={norm:.4f}"
        return line + f" config={self.config_hash[:12]}"


def run_eval(policy, make_env_fn, n_episodes, seeds, make_pipeline=None, config_hash=""):
    """Greedy rollouts of ``policy`` on fresh environments, one per seed.

    ``policy`` is either an agent exposing ``act(obs, epsilon)`` together with
    ``make_pipeline`` (observation pipeline factory), or a
    :class:`BaselinePolicy`, whose motor actions are drawn uniformly.
    ``make_env_fn(seed)`` builds the environment.
    """
    returns = []
    trace = None
    for seed in seeds:
        env = make_env_fn(seed)
        if trace is None:
            trace = SensoryTrace(env.frame_shape, n_actions=env.n_sensory)
        is_baseline = isinstance(policy, BaselinePolicy)
        if is_baseline:
            if policy.n_actions != env.n_sensory:
                raise ValueError("baseline action space does not match the environment")
            motor_rng = np.random.default_rng(seed)
            policy.rng = np.random.default_rng([seed, 1])
        elif getattr(policy, "n_sensory", env.n_sensory) != env.n_sensory or \
                getattr(policy, "n_motor", env.n_motor) != env.n_motor:
            raise ValueError("agent action spaces do not match the environment")
        for _ in range(n_episodes):
            packet = env.reset()
            pipeline = None if is_baseline else make_pipeline()
            obs = None if is_baseline else pipeline.reset(packet)
            total, step, done = 0.0, 0, False
            while not done:
                if is_baseline:
                    a_s = int(motor_rng.integers(env.n_motor))
                    a_o = policy.action(step)
                else:
                    a_s, a_o = policy.act(obs, 0.0)
                packet, r, done = env.step(a_s, a_o)
                trace.add((*packet.fovea_location, *packet.fovea_size), a_o)
                if not is_baseline:
                    obs = pipeline.observe(packet)
                total += r
                step += 1
            returns.append(total)
    return EvalReport(returns, list(seeds), config_hash), trace


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
