"""Simulator quality metrics: symptom density and coincidence degree."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import RecordBase, to_existence_vector
from .orchestrator import (FULL_STATES, INIT, build_setup, classifier_predict,
                           collect_full_states, derive_rng, jsonable, train_classifier)


def symptom_density(states):
    """Fraction of entries answered yes or no."""
    states = np.asarray(states)
    if states.size == 0:
        raise ValueError("no states given")
    return float(np.mean((states == 1) | (states == -1)))


def coincidence_degree(train_states, train_labels, test_records, n, m, rng, iterations=100_000,
                       batch_size=32, lr=1e-3, decay_every=40_000, hidden=64):
    """Accuracy on raw test records of a classifier fit to simulated full states."""
    net = train_classifier(train_states, train_labels, m, rng, n_models=1, iterations=iterations,
                           batch_size=batch_size, lr=lr, decay_every=decay_every, hidden=hidden)
    y = np.stack([to_existence_vector(r, n) for r in test_records])
    labels = np.array([r.disease for r in test_records])
    return float(np.mean(classifier_predict(net, y) == labels))


@dataclass
class MetricReport:
    simulator: str
    seed: int
    symptom_density: float
    coincidence_degree: float
    n_states: int
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(jsonable(asdict(self)), indent=2) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json())


def simulator_report(config, data, models=None, n_states=None, iterations=None):
    """SD and CD of ``config.simulator`` with simulated states from the training pool.

    The returned report also carries the propensity models used, so several
    simulator kinds can share one trained model.
    """
    setup = build_setup(config, data, models)
    n_states = n_states or config.sl_states
    rng = derive_rng(config.seed, FULL_STATES)
    states, labels = collect_full_states(setup.train_sim, setup.train_anchors, n_states, rng)
    cd = coincidence_degree(states, labels, data.test, data.n, data.m,
                            derive_rng(config.seed, INIT),
                            iterations=iterations or config.sl_iterations,
                            batch_size=config.batch_size, lr=config.sl_lr,
                            decay_every=config.sl_decay_every, hidden=config.hidden)
    report = MetricReport(config.simulator, config.seed, symptom_density(states), cd, n_states,
                          extra={"raw_density": symptom_density(
                              RecordBase(data.train, data.n, data.m).y)})
    return report, setup.models
