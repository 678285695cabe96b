"""Dual-head DQN with a learned sensorimotor reward.

:class:`SugarlAgent` keeps an online and a target :class:`DualHeadNet`
(motor Q and sensory Q over a shared encoder) and a :class:`RewardNet`
inverse-dynamics model.  The reward model's probability for the executed
motor action turns into an intrinsic reward that is added to the
environment reward before both heads are regressed onto one target.

Agents follow the scikit-learn estimator conventions: hyperparameters go
through ``__init__`` untouched, ``fit(env)`` trains, ``predict(obs)`` returns
greedy actions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import diffnet
from .diffnet import (AdamState, DualHeadNet, MultiHeadNet, RewardNet, adam_step,
                      build_encoder, identity_encoder, softmax_cross_entropy)
from .evalkit import BaselinePolicy

NEGATIVE, POSITIVE, OFF = "negative", "positive", "off"
SHARED, SEPARATE = "shared", "separate"
LEARNED = "learned"


@dataclass(frozen=True)
class SugarlConfig:
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
    beta: float | None = None  # None: derive from the environment's best return
    reward_sign: str = NEGATIVE
    joint_learning: str = SHARED
    balance: bool = True
    net_input: int = 84

    def validate(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.reward_sign not in (NEGATIVE, POSITIVE, OFF):
            raise ValueError(f"reward_sign must be one of {NEGATIVE}, {POSITIVE}, {OFF}")
        if self.joint_learning not in (SHARED, SEPARATE):
            raise ValueError(f"joint_learning must be {SHARED!r} or {SEPARATE!r}")
        for key in ("eps_decay_steps", "train_freq", "target_update", "batch_size",
                    "reward_train_freq", "buffer_size", "net_input"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1")
        if self.learning_start < 0:
            raise ValueError("learning_start must be >= 0")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be non-negative")
        return self

    def epsilon(self, step):
        """Linear decay from ``eps_start`` to ``eps_end`` over ``eps_decay_steps``."""
        frac = min(step / self.eps_decay_steps, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


# -- reward arithmetic --------------------------------------------------------

def sensorimotor_reward(p, mode=NEGATIVE):
    """Intrinsic reward from the predicted probability of the executed motor action."""
    p = np.asarray(p, dtype=float)
    if mode == NEGATIVE:
        return -(1.0 - p)
    if mode == POSITIVE:
        return p
    if mode == OFF:
        return np.zeros_like(p)
    raise ValueError(f"unknown reward mode {mode!r}")


def combine_reward(r_env, r_sugarl, beta, balance=True):
    """Environment reward plus the scaled intrinsic reward (scale 1 without balance)."""
    scale = beta if balance else 1.0
    return r_env + scale * r_sugarl


def estimate_beta(returns=None, lengths=None, max_return=None, max_length=None):
    """Average per-step environment return.

    Either mean over trajectories of ``return / length``, or
    ``max_return / max_length`` for the best possible episode.
    """
    if returns is not None:
        returns = np.asarray(returns, dtype=float)
        lengths = np.asarray(lengths, dtype=float)
        if returns.size == 0 or returns.shape != lengths.shape:
            raise ValueError("need one length per return and at least one trajectory")
        if np.any(lengths <= 0):
            raise ValueError("zero-length trajectory")
        return float(np.mean(returns / lengths))
    if max_return is None or max_length is None:
        raise ValueError("pass returns and lengths, or max_return and max_length")
    if max_length <= 0:
        raise ValueError("zero-length trajectory")
    return max_return / max_length


# -- replay -------------------------------------------------------------------

@dataclass
class Transition:
    obs: np.ndarray
    motor_action: int
    sensory_action: int
    reward: float
    next_obs: np.ndarray
    done: bool

    @property
    def raw_pair(self):
        return self.obs, self.next_obs


@dataclass
class Batch:
    obs: np.ndarray
    motor_actions: np.ndarray
    sensory_actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity, rng=None):
        self.capacity = int(capacity)
        self.rng = np.random.default_rng() if rng is None else rng
        self.pos = 0
        self.size = 0
        self._obs = self._next = None

    def __len__(self):
        return self.size

    def add(self, obs, motor_action, sensory_action, reward, next_obs, done):
        if self._obs is None:
            obs = np.asarray(obs)
            self._obs = np.zeros((self.capacity,) + obs.shape, dtype=obs.dtype)
            self._next = np.zeros_like(self._obs)
            self._a_s = np.zeros(self.capacity, dtype=np.int64)
            self._a_o = np.zeros(self.capacity, dtype=np.int64)
            self._r = np.zeros(self.capacity, dtype=np.float64)
            self._done = np.zeros(self.capacity, dtype=bool)
        i = self.pos
        self._obs[i] = obs
        self._next[i] = next_obs
        self._a_s[i] = motor_action
        self._a_o[i] = sensory_action
        self._r[i] = reward
        self._done[i] = done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def sample_indices(self, batch_size):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.rng.integers(0, self.size, size=batch_size)

    def gather(self, idx):
        idx = np.asarray(idx)
        return Batch(self._obs[idx], self._a_s[idx], self._a_o[idx], self._r[idx],
                     self._next[idx], self._done[idx])

    def sample(self, batch_size):
        return self.gather(self.sample_indices(batch_size))

    def __getitem__(self, i):
        return Transition(self._obs[i], int(self._a_s[i]), int(self._a_o[i]), float(self._r[i]),
                          self._next[i], bool(self._done[i]))


def _prep(obs):
    obs = np.asarray(obs)
    if obs.dtype == np.uint8:
        return obs.astype(np.float32) * np.float32(1 / 255)
    return obs.astype(np.float32, copy=False)


def _argmax_rows(q):
    # np.argmax returns the first maximum: ties go to the lowest index
    return np.argmax(q, axis=1)


# -- agents -------------------------------------------------------------------

class _AgentBase(BaseEstimator):

    def _check_fitted(self):
        if not getattr(self, "initialized_", False):
            raise NotFittedError(f"{type(self).__name__} is not initialized; call initialize() or fit()")

    def _rngs(self):
        ss = np.random.SeedSequence(self.seed)
        init, act, replay, view = ss.spawn(4)
        return (np.random.default_rng(init), np.random.default_rng(act),
                np.random.default_rng(replay), np.random.default_rng(view))

    def _encoder(self, channels, rng):
        if self.encoder == "identity":
            return identity_encoder(self.in_features * channels // self.in_channels)
        return build_encoder(channels, self.config_.net_input, rng=rng)

    def fit(self, env, total_steps, pipeline, log_path=None):
        """Train on ``env`` for ``total_steps`` agent steps (see :func:`train_loop`)."""
        if not getattr(self, "initialized_", False):
            self.initialize()
        self.history_ = train_loop(env, self, total_steps, pipeline, log_path=log_path)
        return self


class SugarlAgent(_AgentBase):
    """Motor and sensory Q heads trained jointly with a sensorimotor reward.

    ``sensory_policy`` replaces the learned sensory head with a baseline
    (``"random_view"``, ``"raster_scan"`` or ``"static"``); the motor head
    then learns from the environment reward alone.
    """

    def __init__(self, n_motor=3, n_sensory=16, in_channels=4, config=None, seed=0,
                 sensory_policy=LEARNED, static_anchor=5, encoder="conv", in_features=None):
        self.n_motor = n_motor
        self.n_sensory = n_sensory
        self.in_channels = in_channels
        self.config = config
        self.seed = seed
        self.sensory_policy = sensory_policy
        self.static_anchor = static_anchor
        self.encoder = encoder
        self.in_features = in_features

    # -- setup ------------------------------------------------------------
    def initialize(self):
        cfg = self.config_ = (self.config or SugarlConfig()).validate()
        init_rng, self.act_rng_, replay_rng, view_rng = self._rngs()
        self.online_ = DualHeadNet(self.in_channels, self.n_motor, self.n_sensory, rng=init_rng,
                                   encoder=self._encoder(self.in_channels, init_rng))
        self.target_ = DualHeadNet(self.in_channels, self.n_motor, self.n_sensory, rng=init_rng,
                                   encoder=self._encoder(self.in_channels, init_rng))
        self.target_.copy_from(self.online_)
        self.optimizer_ = AdamState.for_params(self.online_.parameters(), lr=cfg.lr)
        self.uses_reward_module_ = self.learns_sensory and cfg.reward_sign != OFF
        self.reward_net_ = None
        if self.uses_reward_module_:
            self.reward_net_ = RewardNet(self.in_channels, self.n_motor, rng=init_rng,
                                         encoder=self._encoder(2 * self.in_channels, init_rng))
            self.reward_optimizer_ = AdamState.for_params(self.reward_net_.parameters(),
                                                          lr=cfg.reward_lr)
        self.baseline_ = None
        if not self.learns_sensory:
            self.baseline_ = BaselinePolicy(self.sensory_policy, self.static_anchor,
                                            n_actions=self.n_sensory, seed=self.seed)
            self.baseline_.rng = view_rng
        self.replay_ = ReplayBuffer(cfg.buffer_size, rng=replay_rng)
        self.beta_ = 1.0 if cfg.beta is None else cfg.beta
        self.steps_ = 0
        self.updates_ = 0
        self.episode_step_ = 0
        self.initialized_ = True
        return self

    @property
    def learns_sensory(self):
        return self.sensory_policy == LEARNED

    # -- acting -----------------------------------------------------------
    def q_values(self, obs):
        self._check_fitted()
        obs = _prep(obs)
        if obs.ndim == self._obs_ndim():
            obs = obs[None]
        return self.online_.forward(obs)

    def _obs_ndim(self):
        return 1 if self.encoder == "identity" else 3

    def select_actions(self, obs, epsilon, q=None):
        """Epsilon-greedy per head, with independent exploration draws."""
        self._check_fitted()
        rng = self.act_rng_
        explore_s = rng.random() < epsilon
        explore_o = rng.random() < epsilon
        if q is None and not (explore_s and (explore_o or not self.learns_sensory)):
            q = self.q_values(obs)
        a_s = int(rng.integers(self.n_motor)) if explore_s else int(_argmax_rows(q[0])[0])
        if not self.learns_sensory:
            a_o = self.baseline_.action(self.episode_step_)
        elif explore_o:
            a_o = int(rng.integers(self.n_sensory))
        else:
            a_o = int(_argmax_rows(q[1])[0])
        return a_s, a_o

    def act(self, obs, epsilon):
        return self.select_actions(obs, epsilon)

    def predict(self, obs):
        """Greedy (motor, sensory) actions for a batch of observations."""
        q_s, q_o = self.q_values(obs)
        a_s = _argmax_rows(q_s)
        if self.learns_sensory:
            a_o = _argmax_rows(q_o)
        else:
            a_o = np.full(len(a_s), self.baseline_.action(self.episode_step_))
        return np.stack([a_s, a_o], axis=1)

    def begin_episode(self):
        self.episode_step_ = 0

    def end_step(self):
        self.episode_step_ += 1

    # -- reward module ----------------------------------------------------
    def action_probabilities(self, obs, next_obs, motor_actions):
        """p(a_s | o_t, o_t+1) under the current reward model (no caching side effects)."""
        logits = self.reward_net_.logits(_prep(obs), _prep(next_obs))
        probs = diffnet.softmax(logits.astype(np.float64))
        return probs[np.arange(len(motor_actions)), motor_actions]

    def sensorimotor_reward(self, obs, next_obs, motor_actions):
        if not self.uses_reward_module_:
            return np.zeros(len(motor_actions))
        p = self.action_probabilities(obs, next_obs, motor_actions)
        return sensorimotor_reward(p, self.config_.reward_sign)

    def train_reward_module(self, batch):
        """One cross-entropy step on the inverse-dynamics model.

        Returns ``(loss, accuracy, p_label)``; ``p_label`` are the probabilities
        before the update.
        """
        if len(batch) == 0:
            raise ValueError("empty batch")
        net = self.reward_net_
        logits = net.logits(_prep(batch.obs), _prep(batch.next_obs))
        loss, p, dlogits = softmax_cross_entropy(logits.astype(np.float64), batch.motor_actions)
        net.backward((dlogits,))
        adam_step(net.parameters(), net.gradients(), self.reward_optimizer_)
        acc = float(np.mean(np.argmax(logits, axis=1) == batch.motor_actions))
        return loss, acc, p

    # -- value learning ---------------------------------------------------
    def compute_targets(self, batch, r_sugarl=None):
        """Regression targets for a batch.

        Shared learning returns one array ``y``; separate learning returns
        ``(y_motor, y_sensory)`` where the motor head sees only the environment
        reward and the sensory head only the scaled intrinsic reward.
        """
        cfg = self.config_
        if r_sugarl is None:
            r_sugarl = self.sensorimotor_reward(batch.obs, batch.next_obs, batch.motor_actions)
        scale = self.beta_ if cfg.balance else 1.0
        q_s_next, q_o_next = self.target_.forward(_prep(batch.next_obs))
        not_done = 1.0 - batch.dones.astype(np.float64)
        boot_s = cfg.gamma * not_done * q_s_next.max(axis=1)
        boot_o = cfg.gamma * not_done * q_o_next.max(axis=1)
        r_env = batch.rewards.astype(np.float64)
        if not self.learns_sensory:
            return r_env + boot_s
        if cfg.joint_learning == SHARED:
            return r_env + scale * r_sugarl + boot_s + boot_o
        return r_env + boot_s, scale * r_sugarl + boot_o

    def td_loss_and_grads(self, batch, targets):
        """Squared TD error and the per-head output gradients (no parameter update)."""
        n = len(batch)
        if n < 1:
            raise ValueError("batch must hold at least one transition")
        q_s, q_o = self.online_.forward(_prep(batch.obs))
        rows = np.arange(n)
        qs_a = q_s[rows, batch.motor_actions].astype(np.float64)
        qo_a = q_o[rows, batch.sensory_actions].astype(np.float64)
        d_s = np.zeros(q_s.shape)
        d_o = np.zeros(q_o.shape)
        if not self.learns_sensory:
            resid = qs_a - targets
            d_s[rows, batch.motor_actions] = 2 * resid / n
            return float(np.mean(resid ** 2)), (d_s, None)
        if isinstance(targets, tuple):
            y_s, y_o = targets
            res_s, res_o = qs_a - y_s, qo_a - y_o
            d_s[rows, batch.motor_actions] = 2 * res_s / n
            d_o[rows, batch.sensory_actions] = 2 * res_o / n
            return float(np.mean(res_s ** 2) + np.mean(res_o ** 2)), (d_s, d_o)
        resid = qs_a + qo_a - targets
        d_s[rows, batch.motor_actions] = 2 * resid / n
        d_o[rows, batch.sensory_actions] = 2 * resid / n
        return float(np.mean(resid ** 2)), (d_s, d_o)

    def td_update(self, batch, r_sugarl=None):
        """One Adam step on the Q network; returns the mean squared TD error."""
        targets = self.compute_targets(batch, r_sugarl)
        loss, grads = self.td_loss_and_grads(batch, targets)
        self.online_.backward(grads)
        adam_step(self.online_.parameters(), self.online_.gradients(), self.optimizer_)
        self.updates_ += 1
        return loss

    def learn(self, batch, train_q=True, train_reward=True):
        """Reward-model step then TD step on the same sampled batch.

        The intrinsic reward uses the reward model's probabilities computed
        before its own update.  Returns ``(td_loss, reward_accuracy)``.
        """
        r_sugarl, acc = None, None
        if self.uses_reward_module_ and train_reward:
            _, acc, p = self.train_reward_module(batch)
            r_sugarl = sensorimotor_reward(p, self.config_.reward_sign)
        loss = self.td_update(batch, r_sugarl) if train_q else None
        return loss, acc

    def sync_target(self):
        self.target_.copy_from(self.online_)

    # -- persistence ------------------------------------------------------
    def networks(self):
        nets = {"online": self.online_, "target": self.target_}
        if self.reward_net_ is not None:
            nets["reward"] = self.reward_net_
        return nets

    def save(self, directory, tag=""):
        """One checkpoint per network; ``tag`` is bound into each spec hash."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, net in self.networks().items():
            paths[name] = directory / f"{name}.ckpt"
            diffnet.save_checkpoint(paths[name], net, tag)
        return paths

    def load(self, directory, tag=""):
        self._check_fitted()
        for name, net in self.networks().items():
            diffnet.load_checkpoint(Path(directory) / f"{name}.ckpt", net, tag)
        return self


class SinglePolicyAgent(_AgentBase):
    """One Q head over the product space of motor x sensory actions."""

    def __init__(self, n_motor=3, n_sensory=16, in_channels=4, config=None, seed=0,
                 encoder="conv", in_features=None):
        self.n_motor = n_motor
        self.n_sensory = n_sensory
        self.in_channels = in_channels
        self.config = config
        self.seed = seed
        self.encoder = encoder
        self.in_features = in_features

    @property
    def n_joint(self):
        return self.n_motor * self.n_sensory

    def decode(self, k):
        return divmod(int(k), self.n_sensory)

    def initialize(self):
        cfg = self.config_ = (self.config or SugarlConfig(reward_sign=OFF)).validate()
        init_rng, self.act_rng_, replay_rng, _ = self._rngs()
        enc = self._encoder(self.in_channels, init_rng)
        self.online_ = MultiHeadNet(*enc, {"joint": self.n_joint}, rng=init_rng)
        enc = self._encoder(self.in_channels, init_rng)
        self.target_ = MultiHeadNet(*enc, {"joint": self.n_joint}, rng=init_rng)
        self.target_.copy_from(self.online_)
        self.optimizer_ = AdamState.for_params(self.online_.parameters(), lr=cfg.lr)
        self.replay_ = ReplayBuffer(cfg.buffer_size, rng=replay_rng)
        self.uses_reward_module_ = False
        self.reward_net_ = None
        self.beta_ = 1.0
        self.steps_ = self.updates_ = self.episode_step_ = 0
        self.initialized_ = True
        return self

    def q_values(self, obs):
        self._check_fitted()
        obs = _prep(obs)
        if obs.ndim == (1 if self.encoder == "identity" else 3):
            obs = obs[None]
        return self.online_.forward(obs)[0]

    def select_actions(self, obs, epsilon):
        rng = self.act_rng_
        if rng.random() < epsilon:
            k = int(rng.integers(self.n_joint))
        else:
            k = int(_argmax_rows(self.q_values(obs))[0])
        return self.decode(k)

    act = select_actions

    def predict(self, obs):
        ks = _argmax_rows(self.q_values(obs))
        return np.array([self.decode(k) for k in ks]).reshape(-1, 2)

    def begin_episode(self):
        self.episode_step_ = 0

    def end_step(self):
        self.episode_step_ += 1

    def learn(self, batch, train_q=True, train_reward=True):
        if not train_q:
            return None, None
        cfg = self.config_
        n = len(batch)
        joint = batch.motor_actions * self.n_sensory + batch.sensory_actions
        q_next = self.target_.forward(_prep(batch.next_obs))[0]
        y = batch.rewards + cfg.gamma * (1.0 - batch.dones) * q_next.max(axis=1)
        q = self.online_.forward(_prep(batch.obs))[0]
        rows = np.arange(n)
        resid = q[rows, joint].astype(np.float64) - y
        grad = np.zeros(q.shape)
        grad[rows, joint] = 2 * resid / n
        self.online_.backward((grad,))
        adam_step(self.online_.parameters(), self.online_.gradients(), self.optimizer_)
        self.updates_ += 1
        return float(np.mean(resid ** 2)), None

    def sync_target(self):
        self.target_.copy_from(self.online_)

    def networks(self):
        return {"online": self.online_, "target": self.target_}

    save = SugarlAgent.save
    load = SugarlAgent.load

    def sensorimotor_reward(self, obs, next_obs, motor_actions):
        return np.zeros(len(motor_actions))


def single_policy_agent(n_motor, n_sensory, **kwargs):
    return SinglePolicyAgent(n_motor=n_motor, n_sensory=n_sensory, **kwargs)


# -- training loop ------------------------------------------------------------

LOG_FIELDS = ("step", "episode", "return_env", "return_combined", "epsilon", "td_loss",
              "reward_module_accuracy")


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def train_loop(env, agent, total_steps, pipeline, log_path=None):
    """Act, store, learn.

    Every step: epsilon-greedy action, environment step, replay write.  After
    ``learning_start`` steps: a reward-model step every ``reward_train_freq``
    steps, a TD step every ``train_freq`` steps (sharing the sampled batch when
    both fire), and a target sync every ``target_update`` steps.  Returns the
    per-episode log rows (also written as CSV to ``log_path``).
    """
    cfg = agent.config_
    rows = []
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
    try:
        obs = pipeline.reset(env.reset())
        agent.begin_episode()
        ep_return, ep_idx, episode = 0.0, [], 0
        losses, accs = [], []
        for step in range(total_steps):
            eps = cfg.epsilon(step)
            a_s, a_o = agent.act(obs, eps)
            packet, r_env, done = env.step(a_s, a_o)
            next_obs = pipeline.observe(packet)
            ep_idx.append(agent.replay_.add(obs, a_s, a_o, r_env, next_obs, done))
            ep_return += r_env
            agent.end_step()
            agent.steps_ = step + 1
            obs = next_obs

            if step >= cfg.learning_start:
                train_q = step % cfg.train_freq == 0
                train_r = step % cfg.reward_train_freq == 0
                if train_q or (train_r and agent.uses_reward_module_):
                    batch = agent.replay_.sample(cfg.batch_size)
                    loss, acc = agent.learn(batch, train_q=train_q, train_reward=train_r)
                    if loss is not None:
                        losses.append(loss)
                    if acc is not None:
                        accs.append(acc)
                if step % cfg.target_update == 0:
                    agent.sync_target()

            if done:
                combined = ep_return + _episode_intrinsic(agent, ep_idx)
                row = (step + 1, episode, ep_return, combined, eps,
                       float(np.mean(losses)) if losses else float("nan"),
                       float(np.mean(accs)) if accs else float("nan"))
                rows.append(dict(zip(LOG_FIELDS, row)))
                if writer:
                    writer.writerow([_fmt(v) for v in row])
                episode += 1
                ep_return, ep_idx, losses, accs = 0.0, [], [], []
                obs = pipeline.reset(env.reset())
                agent.begin_episode()
    finally:
        if fh:
            fh.close()
    return rows


def _episode_intrinsic(agent, indices, chunk=256):
    """Scaled intrinsic reward summed over an episode's stored transitions."""
    if not agent.uses_reward_module_ or not indices:
        return 0.0
    cfg = agent.config_
    scale = agent.beta_ if cfg.balance else 1.0
    total = 0.0
    for start in range(0, len(indices), chunk):
        b = agent.replay_.gather(indices[start:start + chunk])
        total += float(np.sum(agent.sensorimotor_reward(b.obs, b.next_obs, b.motor_actions)))
    return scale * total


def config_dict(cfg):
    return asdict(cfg)
