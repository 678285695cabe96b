"""Toy pixel environments and the limited-observability wrapper.

The toy games (catch, chase, dodge) render 84x84 grayscale frames in [0, 1].
:class:`ActiveVisionEnv` hides the frame behind a movable fovea: each step
takes a motor action for the game and a sensory action that moves the
observable area over a 4x4 grid of anchors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

ABSOLUTE = "absolute"
RELATIVE = "relative"
GRID = 4
# relative sensory actions
STAY, UP, DOWN, LEFT, RIGHT = range(5)
RELATIVE_MOVES = {STAY: (0, 0), UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class SensoryState:
    """Placement of the observable area.  ``x`` indexes rows, ``y`` columns."""

    x: int
    y: int
    h: int
    w: int
    foveal_res: tuple[int, int]
    peripheral_res: tuple[int, int] | None = None
    control_mode: str = ABSOLUTE

    def check(self, frame_shape):
        H, W = frame_shape
        if not (0 < self.h <= H and 0 < self.w <= W):
            raise EnvError(f"fovea {self.h}x{self.w} does not fit a {H}x{W} frame")
        if not (0 <= self.x <= H - self.h and 0 <= self.y <= W - self.w):
            raise EnvError(f"fovea at ({self.x}, {self.y}) leaves the frame")


@dataclass
class ObservationPacket:
    foveal: np.ndarray
    peripheral: np.ndarray
    fovea_location: tuple[int, int]
    fovea_size: tuple[int, int]
    crop: np.ndarray = field(repr=False, default=None)  # native-scale foveal pixels


@dataclass(frozen=True)
class EnvConfig:
    name: str = "catch"
    seed: int = 0
    frame_size: int = 84
    fovea: int = 20
    foveal_res: int | None = None  # defaults to the fovea size
    peripheral: bool = False
    peripheral_res: int = 20
    control_mode: str = ABSOLUTE
    max_episode_steps: int = 200
    action_repeat: int = 4
    frame_stack: int = 4

    def validate(self):
        if self.name not in TOY_ENVS:
            raise EnvError(f"unknown environment {self.name!r}; choose from {sorted(TOY_ENVS)}")
        if self.frame_size < 8:
            raise EnvError("frame_size must be at least 8")
        if not 0 < self.fovea <= self.frame_size:
            raise EnvError(f"fovea {self.fovea} must lie in [1, frame_size={self.frame_size}]")
        if self.foveal_res is not None and self.foveal_res < 1:
            raise EnvError("foveal_res must be positive")
        if self.peripheral_res < 1:
            raise EnvError("peripheral_res must be positive")
        if self.control_mode not in (ABSOLUTE, RELATIVE):
            raise EnvError(f"control_mode must be {ABSOLUTE!r} or {RELATIVE!r}")
        for key in ("max_episode_steps", "action_repeat", "frame_stack"):
            if getattr(self, key) < 1:
                raise EnvError(f"{key} must be >= 1")
        return self


# -- image operations ---------------------------------------------------------

def anchor_offsets(total, size):
    """Evenly spaced, boundary-touching anchor coordinates along one axis."""
    return [((total - size) * k) // (GRID - 1) for k in range(GRID)]


def anchor_position(index, frame_shape, fovea_size):
    H, W = frame_shape
    h, w = fovea_size
    row, col = divmod(index, GRID)
    return anchor_offsets(H, h)[row], anchor_offsets(W, w)[col]


def n_sensory_actions(control_mode):
    return GRID * GRID if control_mode == ABSOLUTE else len(RELATIVE_MOVES)


def crop_fovea(frame, s):
    """Pixels of ``frame`` inside the observable area, at native scale."""
    return frame[s.x:s.x + s.h, s.y:s.y + s.w]


@lru_cache(maxsize=128)
def _interp_matrix(src, dst):
    """(dst, src) row-stochastic matrix of corner-aligned linear weights."""
    m = np.zeros((dst, src))
    if dst == 1:
        pos = np.array([(src - 1) / 2.0])
    else:
        pos = np.arange(dst) * ((src - 1) / (dst - 1))
    lo = np.floor(pos).astype(int)
    lo = np.clip(lo, 0, src - 1)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    m.setflags(write=False)
    return m


def interp(image, target_res):
    """Bilinear resize with corner-aligned sampling.

    Output pixel (i, j) samples the source at
    ``(i * (h-1)/(th-1), j * (w-1)/(tw-1))``; a length-1 target samples the
    centre.  Output stays within the input's value range.
    """
    th, tw = target_res
    if th < 1 or tw < 1:
        raise EnvError(f"target resolution must be positive, got {target_res}")
    image = np.asarray(image)
    h, w = image.shape
    if (h, w) == (th, tw):
        return image.copy()
    ry = _interp_matrix(h, th).astype(image.dtype, copy=False)
    rx = _interp_matrix(w, tw).astype(image.dtype, copy=False)
    return ry @ image @ rx.T


def build_peripheral(frame, s, enabled=True):
    """Frame with the foveal rectangle zeroed, resized to the peripheral resolution."""
    if not enabled or s.peripheral_res is None:
        res = s.peripheral_res or (1, 1)
        return np.zeros(res, dtype=frame.dtype)
    rest = frame.copy()
    rest[s.x:s.x + s.h, s.y:s.y + s.w] = 0
    return interp(rest, s.peripheral_res)


def apply_sensory_action(s, action, frame_shape):
    """New sensory state after ``action``.

    Absolute control jumps to anchor ``action`` (row-major on the 4x4 grid);
    relative control moves one anchor step, clamped at the grid edges.
    """
    n = n_sensory_actions(s.control_mode)
    if not 0 <= int(action) < n:
        raise EnvError(f"sensory action {action} outside [0, {n}) for {s.control_mode} control")
    action = int(action)
    if s.control_mode == ABSOLUTE:
        x, y = anchor_position(action, frame_shape, (s.h, s.w))
        return replace(s, x=x, y=y)
    xs = anchor_offsets(frame_shape[0], s.h)
    ys = anchor_offsets(frame_shape[1], s.w)
    row, col = _nearest(xs, s.x), _nearest(ys, s.y)
    dr, dc = RELATIVE_MOVES[action]
    row = min(max(row + dr, 0), GRID - 1)
    col = min(max(col + dc, 0), GRID - 1)
    return replace(s, x=xs[row], y=ys[col])


def _nearest(values, v):
    return int(np.argmin([abs(a - v) for a in values]))


# -- toy games ----------------------------------------------------------------

class ToyEnv:
    """Base class.  Subclasses advance one frame per :meth:`frame_step`."""

    name = "toy"
    motor_actions: tuple[str, ...] = ()
    noop = 0

    def __init__(self, seed=0, size=84):
        self.size = size
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.reset()

    @property
    def n_motor(self):
        return len(self.motor_actions)

    def reset(self):
        raise NotImplementedError

    def frame_step(self, action):
        """Advance one frame; returns the reward earned."""
        raise NotImplementedError

    def render(self):
        raise NotImplementedError

    def scripted_action(self):
        """Action of a full-state reference controller."""
        return self.noop

    def optimal_return(self, frames):
        """Best achievable return over ``frames`` frames, or None if not closed-form."""
        return None

    @staticmethod
    def _blit(img, top, left, h, w, value):
        H, W = img.shape
        t, l = max(int(round(top)), 0), max(int(round(left)), 0)
        b, r = min(int(round(top)) + h, H), min(int(round(left)) + w, W)
        if b > t and r > l:
            img[t:b, l:r] = value


class CatchEnv(ToyEnv):
    """Paddle at the bottom catches balls dropped one at a time.

    Each ball waits ``hold_frames`` at the top, then falls one pixel per
    frame.  Landing on the paddle gives +1, missing it -1; the next ball
    appears immediately.
    """

    name = "catch"
    motor_actions = ("left", "stay", "right")
    noop = 1
    ball = 4
    paddle_w, paddle_h = 16, 4
    ball_speed, paddle_speed = 1, 2
    hold_frames = 8
    ball_value, paddle_value = 1.0, 170 / 255

    def reset(self):
        self.paddle_x = (self.size - self.paddle_w) // 2
        self._new_ball()
        return self

    def _new_ball(self):
        self.ball_col = int(self.rng.integers(0, self.size - self.ball + 1))
        self.ball_row = 0
        self.hold = self.hold_frames

    @property
    def landing_row(self):
        return self.size - self.paddle_h - self.ball

    @property
    def frames_per_ball(self):
        return self.hold_frames + self.landing_row // self.ball_speed

    def frame_step(self, action):
        move = (-1, 0, 1)[action] * self.paddle_speed
        self.paddle_x = min(max(self.paddle_x + move, 0), self.size - self.paddle_w)
        if self.hold > 0:
            self.hold -= 1
            return 0.0
        self.ball_row += self.ball_speed
        if self.ball_row < self.landing_row:
            return 0.0
        caught = (self.ball_col + self.ball > self.paddle_x
                  and self.ball_col < self.paddle_x + self.paddle_w)
        self._new_ball()
        return 1.0 if caught else -1.0

    def render(self):
        img = np.zeros((self.size, self.size), dtype=np.float32)
        self._blit(img, self.ball_row, self.ball_col, self.ball, self.ball, self.ball_value)
        self._blit(img, self.size - self.paddle_h, self.paddle_x, self.paddle_h, self.paddle_w,
                   self.paddle_value)
        return img

    def scripted_action(self):
        centre = self.paddle_x + self.paddle_w / 2
        target = self.ball_col + self.ball / 2
        if target < centre - 1:
            return 0
        if target > centre + 1:
            return 2
        return 1

    def optimal_return(self, frames):
        # the paddle crosses the frame faster than a ball falls, so every ball is catchable
        return float(frames // self.frames_per_ball)


class ChaseEnv(ToyEnv):
    """Steer a square onto a target that drifts around; +1 per contact."""

    name = "chase"
    motor_actions = ("stay", "up", "down", "left", "right")
    noop = 0
    agent_size = target_size = 6
    agent_speed = 2
    agent_value, target_value = 1.0, 150 / 255

    def reset(self):
        lim = self.size - self.agent_size
        self.agent = np.array([lim // 2, lim // 2])
        self._new_target()
        return self

    def _new_target(self):
        lim = self.size - self.target_size
        self.target = self.rng.integers(0, lim + 1, size=2)
        self.drift = self.rng.choice([-1, 1], size=2)

    def frame_step(self, action):
        dr, dc = RELATIVE_MOVES[(STAY, UP, DOWN, LEFT, RIGHT)[action]]
        lim = self.size - self.agent_size
        self.agent = np.clip(self.agent + self.agent_speed * np.array([dr, dc]), 0, lim)
        if self.rng.random() < 0.05:
            self.drift = self.rng.choice([-1, 1], size=2)
        nxt = self.target + self.drift
        tlim = self.size - self.target_size
        bounce = (nxt < 0) | (nxt > tlim)
        self.drift = np.where(bounce, -self.drift, self.drift)
        self.target = np.clip(self.target + self.drift, 0, tlim)
        if np.all(np.abs(self.agent - self.target) < self.agent_size):
            self._new_target()
            return 1.0
        return 0.0

    def render(self):
        img = np.zeros((self.size, self.size), dtype=np.float32)
        self._blit(img, *self.target, self.target_size, self.target_size, self.target_value)
        self._blit(img, *self.agent, self.agent_size, self.agent_size, self.agent_value)
        return img

    def scripted_action(self):
        d = self.target - self.agent
        if abs(d[0]) >= abs(d[1]) and d[0] != 0:
            return 2 if d[0] > 0 else 1
        if d[1] != 0:
            return 4 if d[1] > 0 else 3
        return 0


class DodgeEnv(ToyEnv):
    """Avoid falling blocks: -1 per hit, +0.01 for every agent step survived."""

    name = "dodge"
    motor_actions = ("left", "stay", "right")
    noop = 1
    player_w, player_h = 8, 4
    block = 6
    block_speed, player_speed = 2, 2
    spawn_every = 12
    player_value, block_value = 1.0, 150 / 255
    survival_bonus = 0.01  # per agent step, added by the wrapper

    def reset(self):
        self.player_x = (self.size - self.player_w) // 2
        self.blocks = []  # [row, col]
        self.clock = 0
        return self

    def frame_step(self, action):
        move = (-1, 0, 1)[action] * self.player_speed
        self.player_x = min(max(self.player_x + move, 0), self.size - self.player_w)
        self.clock += 1
        if self.clock % self.spawn_every == 0:
            self.blocks.append([-self.block, int(self.rng.integers(0, self.size - self.block + 1))])
        reward = 0.0
        top = self.size - self.player_h
        kept = []
        for row, col in self.blocks:
            row += self.block_speed
            hit = (row + self.block > top and col + self.block > self.player_x
                   and col < self.player_x + self.player_w)
            if hit:
                reward -= 1.0
            elif row < self.size:
                kept.append([row, col])
        self.blocks = kept
        return reward

    def render(self):
        img = np.zeros((self.size, self.size), dtype=np.float32)
        for row, col in self.blocks:
            self._blit(img, row, col, self.block, self.block, self.block_value)
        self._blit(img, self.size - self.player_h, self.player_x, self.player_h, self.player_w,
                   self.player_value)
        return img

    def scripted_action(self):
        top = self.size - self.player_h
        danger = [c for r, c in self.blocks if r + self.block > top - 24]
        centre = self.player_x + self.player_w / 2
        for c in danger:
            if c - self.player_w <= self.player_x <= c + self.block:
                return 0 if c + self.block / 2 > centre else 2
        return 1


TOY_ENVS = {cls.name: cls for cls in (CatchEnv, ChaseEnv, DodgeEnv)}


# -- active-vision wrapper ----------------------------------------------------

class ActiveVisionEnv:
    """A toy game seen only through a movable fovea.

    ``step(a_s, a_o)`` repeats the motor action ``action_repeat`` frames,
    moves the fovea once, and returns the packet for the resulting frame.
    The full frame stays internal; ``_full_frame()`` exists for tests.
    """

    def __init__(self, config: EnvConfig):
        self.config = config.validate()
        self.game = TOY_ENVS[config.name](seed=config.seed, size=config.frame_size)
        self.frame_shape = (config.frame_size, config.frame_size)
        fres = config.foveal_res or config.fovea
        self._initial_sensory = SensoryState(
            x=0, y=0, h=config.fovea, w=config.fovea, foveal_res=(fres, fres),
            peripheral_res=(config.peripheral_res, config.peripheral_res),
            control_mode=config.control_mode,
        )
        self._initial_sensory.check(self.frame_shape)
        self.sensory = self._initial_sensory
        self.steps = 0
        self.done = False
        self._frame = None

    @property
    def n_motor(self):
        return self.game.n_motor

    @property
    def n_sensory(self):
        return n_sensory_actions(self.config.control_mode)

    @property
    def motor_noop(self):
        return self.game.noop

    def reset(self):
        """Start an episode (the game RNG continues, so episodes differ)."""
        self.game.reset()
        self.sensory = self._initial_sensory
        self.steps = 0
        self.done = False
        self._frame = self.game.render()
        return self._packet()

    def step(self, motor_action, sensory_action):
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        if self._frame is None:
            raise EnvError("step() called before reset()")
        if not 0 <= int(motor_action) < self.n_motor:
            raise EnvError(f"motor action {motor_action} outside [0, {self.n_motor})")
        reward = 0.0
        for _ in range(self.config.action_repeat):
            reward += self.game.frame_step(int(motor_action))
        if isinstance(self.game, DodgeEnv):
            reward += self.game.survival_bonus
        self.sensory = apply_sensory_action(self.sensory, sensory_action, self.frame_shape)
        self.steps += 1
        self.done = self.steps >= self.config.max_episode_steps
        self._frame = self.game.render()
        return self._packet(), reward, self.done

    def _packet(self):
        s = self.sensory
        crop = crop_fovea(self._frame, s)
        foveal = interp(crop, s.foveal_res)
        peripheral = build_peripheral(self._frame, s, self.config.peripheral)
        return ObservationPacket(foveal, peripheral, (s.x, s.y), (s.h, s.w), crop=crop.copy())

    def _full_frame(self):
        return self._frame.copy()

    def optimal_return(self):
        """Closed-form best episode return when the game provides one."""
        frames = self.config.max_episode_steps * self.config.action_repeat
        return self.game.optimal_return(frames)


def make_env(name="catch", config: EnvConfig | None = None, **overrides):
    """Build an :class:`ActiveVisionEnv`, reset to its first frame."""
    cfg = config or EnvConfig()
    cfg = replace(cfg, name=name, **overrides)
    env = ActiveVisionEnv(cfg)
    env.reset()
    return env
