"""Synthetic data shared by the agent and acceptance tests."""

import itertools

import numpy as np

from avrl.agent import Batch


def action_reveal_batch(rng, n, n_actions=3, channels=4, size=42, shuffle=False):
    """Observation pairs whose second frame draws the motor action as a bright bar.

    Frames are uniform noise; in ``o_{t+1}`` the newest channel gets a bar in
    column block ``a``.  With ``shuffle`` the labels are permuted, removing
    any relation between pixels and actions.
    """
    obs = rng.integers(0, 128, size=(n, channels, size, size), dtype=np.uint8)
    nxt = np.roll(obs, -1, axis=1)
    nxt[:, -1] = rng.integers(0, 128, size=(n, size, size), dtype=np.uint8)
    actions = rng.integers(n_actions, size=n)
    width = size // n_actions
    for i, a in enumerate(actions):
        nxt[i, -1, size // 3:2 * size // 3, a * width:(a + 1) * width] = 255
    labels = rng.permutation(actions) if shuffle else actions
    zeros = np.zeros(n, dtype=np.int64)
    return Batch(obs, labels, zeros, np.zeros(n), nxt, np.zeros(n, dtype=bool))


def tabular_mdp():
    """Two states; the motor action picks the next state; rewards add over the heads."""
    r_motor = np.array([[1.0, 0.0], [0.0, 0.5]])
    r_sensory = np.array([[0.2, -0.3], [0.4, 0.1]])
    return r_motor[:, :, None] + r_sensory[:, None, :]


def value_iteration(r, gamma, iters=2000):
    """Joint Q*(s, a_s, a_o) with next state = a_s."""
    q = np.zeros_like(r)
    for _ in range(iters):
        v = q.reshape(q.shape[0], -1).max(axis=1)
        q = r + gamma * v[None, :, None]
    return q


def tabular_batch(r):
    """Every (s, a_s, a_o) tuple once, one-hot states, no terminals."""
    tuples = list(itertools.product(*map(range, r.shape)))
    eye = np.eye(r.shape[0], dtype=np.float32)
    s, a_s, a_o = (np.array(t) for t in zip(*tuples))
    return Batch(eye[s], a_s, a_o, r[s, a_s, a_o], eye[a_s], np.zeros(len(tuples), dtype=bool))
