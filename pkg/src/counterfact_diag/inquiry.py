"""Inquiry branch: dueling Q-network, epsilon-greedy selection, replay, TD."""
from __future__ import annotations

import numpy as np

from .data import UNVISITED
from .nn import Mlp, adam_step

VISITED_PENALTY = 1e6
DQ_CAPACITY = 50_000


def encode_q_input(s, mu):
    """State codes, visited indicators and disease means, concatenated."""
    s = np.asarray(s, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    return np.concatenate([s, (s != UNVISITED).astype(np.float64), mu], axis=-1)


class QNetworkPair:
    """Online and target dueling networks of identical shape."""

    def __init__(self, online, target=None, alpha=0.99):
        if online.topology != "dueling_q":
            raise ValueError("Q networks must use the dueling_q topology")
        self.online = online
        self.target = target if target is not None else online.copy()
        self.alpha = alpha

    @classmethod
    def init(cls, n_in, n_actions, rng, hidden=64, alpha=0.99):
        return cls(Mlp.init("dueling_q", n_in, n_actions, rng, hidden=(hidden, hidden)), alpha=alpha)


def masked_q_values(pair, s, mu, net=None):
    net = pair.online if net is None else net
    s = np.asarray(s)
    q = net(encode_q_input(s, mu))
    return q - VISITED_PENALTY * (s != UNVISITED)


def greedy(q, legal):
    """Lowest-index argmax among legal actions."""
    q = np.where(legal, q, -np.inf)
    return int(np.argmax(q))


def select_action(pair, s, mu, epsilon, rng):
    s = np.asarray(s)
    unvisited = np.flatnonzero(s == UNVISITED)
    if unvisited.size == 0:
        raise ValueError("every symptom has already been inquired")
    if epsilon > 0 and rng.random() < epsilon:
        return int(unvisited[rng.integers(unvisited.size)])
    return greedy(masked_q_values(pair, s, mu), s == UNVISITED)


class ReplayBuffer:
    """Uniform-sampling FIFO ring buffer over named array fields."""

    def __init__(self, capacity, fields):
        self.capacity = capacity
        self.data = {name: np.zeros((capacity, *shape), dtype=dtype)
                     for name, (shape, dtype) in fields.items()}
        self.size = 0
        self._next = 0

    @classmethod
    def for_p2a(cls, n, m, capacity=DQ_CAPACITY):
        return cls(capacity, {
            "s_prev": ((n,), np.int8), "mu_prev": ((m,), np.float64), "action": ((), np.int64),
            "s": ((n,), np.int8), "mu": ((m,), np.float64), "terminal": ((), bool),
        })

    def __len__(self):
        return self.size

    def push(self, **item):
        for name, arr in self.data.items():
            arr[self._next] = item[name]
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        rows = rng.integers(0, self.size, size=batch_size)
        return {name: arr[rows] for name, arr in self.data.items()}


def q_learning_gradients(online, target, x_prev, actions, rewards, x_next, next_legal,
                         terminal, gamma):
    """Semi-gradient of mean squared TD error; targets use the frozen net."""
    q_next = target(x_next)
    best_next = np.where(next_legal, q_next, -np.inf).max(axis=1)
    best_next = np.where(terminal | ~np.isfinite(best_next), 0.0, best_next)
    y = rewards + gamma * best_next
    q, cache = online.forward(x_prev)
    rows = np.arange(len(actions))
    td = q[rows, actions] - y
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * td / len(actions)
    return float(np.mean(td ** 2)), online.backward(cache, dq)


def td_gradients(pair, batch, gamma=0.95, reward=-0.1):
    n = batch["s"].shape[1]
    if len(batch["action"]) == 0:
        raise ValueError("empty batch")
    terminal = np.asarray(batch["terminal"], dtype=bool)
    rewards = np.full(len(terminal), reward, dtype=np.float64)
    return q_learning_gradients(
        pair.online, pair.target,
        encode_q_input(batch["s_prev"], batch["mu_prev"]), np.asarray(batch["action"]),
        rewards, encode_q_input(batch["s"], batch["mu"]),
        np.asarray(batch["s"]) == UNVISITED, terminal, gamma)


def td_update(pair, batch, gamma=0.95, reward=-0.1, lr=1e-3):
    """One Adam step on the constant-reward TD objective; returns the loss."""
    loss, grads = td_gradients(pair, batch, gamma, reward)
    adam_step(pair.online, grads, lr)
    return loss


def polyak_update(pair, alpha=None):
    alpha = pair.alpha if alpha is None else alpha
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("Polyak factor must lie in [0, 1]")
    for pt, p in zip(pair.target.params, pair.online.params):
        pt *= alpha
        pt += (1.0 - alpha) * p
    return pair
