"""Patient simulators answering symptom inquiries for one anchor record.

``ps`` answers only what the anchor record observed and says "not sure"
otherwise. ``gen`` fills counterfactual answers from the propensity
network's per-symptom probability. ``pbps`` samples a matched same-disease
patient and copies that patient's factual answer.
"""
from __future__ import annotations

import numpy as np

from .data import UNVISITED, RecordBase, initial_state, to_existence_vector
from .propensity import MatchTable

KINDS = ("ps", "gen", "pbps")

TEMPLATES = {1: "Yes.", -1: "No.", 0: "I'm not sure."}


def question(symptom_name):
    return f"Do you have {symptom_name}?"


class Simulator:
    """Answering pool plus the counterfactual rule of one simulator kind.

    ``gen_band`` switches GEN from sampling to thresholding: answer yes/no
    only when the predicted probability is at least ``0.5 + gen_band`` away
    from the opposite answer, otherwise "not sure".
    """

    def __init__(self, kind, base: RecordBase, model=None, gen_band=None):
        if kind not in KINDS:
            raise ValueError(f"unknown simulator kind {kind!r}")
        if kind in ("gen", "pbps") and model is None:
            raise ValueError(f"{kind} simulator needs a propensity model")
        self.kind = kind
        self.base = base
        self.model = model
        self.gen_band = gen_band
        self.n = base.n
        self._cache = {}
        self.used_records = set()

    def _anchor_cache(self, anchor):
        key = id(anchor)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not anchor:
            if self.kind == "pbps":
                extra = MatchTable(anchor, self.base, self.model)
            elif self.kind == "gen":
                extra = self.model.probabilities(to_existence_vector(anchor, self.n), anchor.disease)
            else:
                extra = None
            hit = (anchor, extra)
            self._cache[key] = hit
        return hit[1]

    def counterfactual(self, anchor, a, rng):
        """Answer for an inquiry the anchor never observed."""
        if self.kind == "ps":
            return 0
        if self.kind == "gen":
            p = self._anchor_cache(anchor)[a]
            if self.gen_band is None:
                return 1 if rng.random() < p else -1
            if p >= 0.5 + self.gen_band:
                return 1
            if p <= 0.5 - self.gen_band:
                return -1
            return 0
        table = self._anchor_cache(anchor)
        if not table.has_candidates[a]:
            return 0
        q = table.sample(a, rng)
        self.used_records.add(self.base.ids[q])
        return int(self.base.y[q, a])


class EpisodeSession:
    def __init__(self, simulator, anchor, rng):
        self.simulator = simulator
        self.anchor = anchor
        self.rng = rng
        self.y = to_existence_vector(anchor, simulator.n)
        self.state = initial_state(anchor, simulator.n)
        self.answers = {a: int(self.state[a]) for a in anchor.explicit}
        self.t = 0

    def step(self, a):
        return step(self, a)


def start_episode(simulator, anchor, rng):
    return EpisodeSession(simulator, anchor, rng)


def step(session, a):
    """Answer inquiry ``a`` and return the updated state.

    Asking an already answered symptom leaves the state unchanged.
    """
    sim = session.simulator
    if not 0 <= a < sim.n:
        raise IndexError(f"inquiry {a} outside [0, {sim.n})")
    if a in session.answers:
        return session.state
    if session.y[a] != 0:
        answer = int(session.y[a])
        if session.anchor.rid is not None:
            sim.used_records.add(session.anchor.rid)
    else:
        answer = sim.counterfactual(session.anchor, a, session.rng)
    session.answers[a] = answer
    session.state[a] = answer
    session.t += 1
    return session.state


def full_state(simulator, anchor, rng):
    """Inquire every symptom in random order; no entry stays unvisited."""
    session = start_episode(simulator, anchor, rng)
    for a in rng.permutation(simulator.n):
        step(session, int(a))
    assert not np.any(session.state == UNVISITED)
    return session.state.copy()
