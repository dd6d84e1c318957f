"""Diagnosis branch: final-state sampler, bootstrap diagnosers, stop rule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import UNVISITED
from .nn import Mlp, adam_step, masked_bce_loss, sigmoid, softmax, softmax_ce_loss

DC_CAPACITY = 1280


def encode_state(s):
    """Network input for a dialogue state: unvisited entries become 0."""
    s = np.asarray(s, dtype=np.float64)
    return np.where(s == UNVISITED, 0.0, s)


class GenerativeSampler:
    """Predicts per-symptom Bernoulli logits of the final state."""

    def __init__(self, net):
        self.net = net

    @classmethod
    def init(cls, n, rng, hidden=64):
        return cls(Mlp.init("multi_class_classifier", n, n, rng, hidden=(hidden, hidden)))

    def probabilities(self, states):
        return sigmoid(self.net(encode_state(states)))


class BootstrapEnsemble:
    """``B`` independently initialised diagnosers held as one stacked network."""

    def __init__(self, net):
        if net.stack is None or net.stack < 2:
            raise ValueError("an ensemble needs at least two diagnosers")
        self.net = net

    @classmethod
    def init(cls, n, m, n_models, rng, hidden=64):
        return cls(Mlp.init("classifier", n, m, rng, hidden=(hidden, hidden), stack=n_models))

    @property
    def size(self):
        return self.net.stack

    def probabilities(self, states):
        """Softmax outputs shaped ``(B, K, m)`` for ``K`` states."""
        return softmax(self.net(encode_state(np.atleast_2d(states))))


@dataclass
class DiseaseStatistics:
    mu: np.ndarray
    sigma: np.ndarray
    n_samples: int
    n_models: int


class DiagnosisBuffer:
    """FIFO store of ``(final state, disease)`` pairs."""

    def __init__(self, n, capacity=DC_CAPACITY):
        self.capacity = capacity
        self.states = np.zeros((capacity, n), dtype=np.int8)
        self.labels = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, state, disease):
        self.states[self._next] = state
        self.labels[self._next] = disease
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def contents(self):
        if self.size < self.capacity:
            return self.states[:self.size], self.labels[:self.size]
        order = np.roll(np.arange(self.capacity), -self._next)
        return self.states[order], self.labels[order]


def visitation_mask(shape, rng):
    """Keep each entry with a per-row probability drawn from U(0, 1)."""
    keep = rng.random(shape[:-1] + (1,))
    return rng.random(shape) < keep


def sampler_gradients(sampler, states, rng):
    states = np.asarray(states)
    keep = visitation_mask(states.shape, rng)
    x = np.where(keep, encode_state(states), 0.0)
    valid = (states == 1) | (states == -1)
    if not valid.any():
        return 0.0, None
    logits, cache = sampler.net.forward(x)
    loss, grad = masked_bce_loss(logits, (states + 1) / 2.0, valid)
    return loss, sampler.net.backward(cache, grad)


def train_sampler(sampler, states, rng, lr=1e-3):
    """One Adam step of masked reconstruction on a batch of final states.

    Only entries answered yes/no are targets; unvisited and not-sure entries
    are excluded from the loss.
    """
    loss, grads = sampler_gradients(sampler, states, rng)
    if grads is not None:
        adam_step(sampler.net, grads, lr)
    return loss


def complete_states(sampler, states, rng):
    """Fill unvisited / not-sure entries of each state with sampled +-1."""
    states = np.asarray(states)
    p = sampler.probabilities(states)
    draws = np.where(rng.random(states.shape) < p, 1, -1).astype(np.int8)
    known = (states == 1) | (states == -1)
    return np.where(known, states, draws).astype(np.int8)


def sample_final_states(sampler, s, n_samples, rng):
    """``K`` Monte-Carlo completions of one state; observed answers are kept."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    s = np.asarray(s)
    p = sampler.probabilities(s)
    draws = np.where(rng.random((n_samples, s.shape[0])) < p, 1, -1).astype(np.int8)
    known = (s == 1) | (s == -1)
    return np.where(known, s, draws).astype(np.int8)


def train_bootstrap(ensemble, states, labels, rng, batch_size=32, lr=1e-3, sampler=None):
    """Each diagnoser takes one Adam step on its own with-replacement batch.

    With ``sampler`` given, the drawn buffer states are completed by the
    sampler first so diagnosers train on the same kind of input they see
    at inference time.
    """
    states = np.asarray(states)
    labels = np.asarray(labels)
    if len(states) == 0:
        raise ValueError("empty diagnosis buffer")
    rows = rng.integers(0, len(states), size=(ensemble.size, batch_size))
    batch = states[rows]
    if sampler is not None:
        batch = complete_states(sampler, batch.reshape(-1, batch.shape[-1]), rng).reshape(batch.shape)
    logits, cache = ensemble.net.forward(encode_state(batch))
    loss, grad = softmax_ce_loss(logits, labels[rows])
    adam_step(ensemble.net, ensemble.net.backward(cache, grad), lr)
    return loss / ensemble.size


def statistics_from_probabilities(probs):
    """Mean and population standard deviation over all ``K * B`` vectors."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1, np.shape(probs)[-1])
    # shifting by one member makes identical vectors give exactly zero spread
    ref = probs[0]
    dev = probs - ref
    mean_dev = dev.mean(axis=0)
    sigma = np.sqrt(((dev - mean_dev) ** 2).mean(axis=0))
    return ref + mean_dev, sigma


def ensemble_statistics(ensemble, final_states):
    probs = ensemble.probabilities(final_states)
    mu, sigma = statistics_from_probabilities(probs)
    return DiseaseStatistics(mu, sigma, n_samples=probs.shape[1], n_models=probs.shape[0])


def decision_threshold(mu, sigma):
    """True when the preferred disease beats every rival's mean + 3 sd.

    A tie for the largest mean never meets the threshold.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape[0] < 2:
        raise ValueError("decision threshold needs at least two diseases")
    i = int(np.argmax(mu))
    rivals = np.arange(mu.shape[0]) != i
    return bool(np.all(mu[i] > mu[rivals] + 3.0 * sigma[rivals]))
