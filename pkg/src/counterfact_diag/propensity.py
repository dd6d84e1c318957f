"""Propensity network training, patient embeddings and kernel matching."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import RecordBase, to_existence_vector
from .nn import Mlp, adam_step, masked_bce_loss, sigmoid

SIGMA2_FLOOR = 1e-6


class NoCandidates(LookupError):
    """No same-disease record has observed the inquired symptom."""


@dataclass
class PropensityHyper:
    iterations: int = 40_000
    batch_size: int = 128
    lr: float = 0.01
    lr_decay_every: int = 10_000
    hidden: int = 64
    seed: int = 0


def encode_input(y, d, mask, m):
    """One-hot disease followed by the masked existence vector."""
    y = np.asarray(y)
    out = np.zeros(m + y.shape[-1])
    out[d] = 1.0
    out[m:] = y * np.asarray(mask)
    return out


def encode_inputs(ys, ds, masks, m):
    ys = np.asarray(ys)
    out = np.zeros((ys.shape[0], m + ys.shape[1]))
    out[np.arange(ys.shape[0]), ds] = 1.0
    out[:, m:] = ys * masks
    return out


def embedding_width(n, m, hidden=64):
    # keep the score layer strictly narrower than the raw covariates
    return min(hidden, n + m - 1)


class PropensityModel:
    """Multi-class classifier over ``m + n`` inputs predicting ``n`` symptoms.

    The last hidden layer (second-to-last FC) is the propensity embedding.
    """

    def __init__(self, net, n, m, trained=False, history=None):
        self.net = net
        self.n, self.m = n, m
        self.trained = trained
        self.history = history or []

    @classmethod
    def init(cls, n, m, rng, hidden=64):
        net = Mlp.init("multi_class_classifier", m + n, n, rng,
                       hidden=(hidden, embedding_width(n, m, hidden)))
        return cls(net, n, m)

    @property
    def embedding_dim(self):
        return self.net.hidden[-1]

    def _require_trained(self):
        if not self.trained:
            raise RuntimeError("propensity model has not been trained")

    def embed(self, y, d, mask=None):
        self._require_trained()
        if mask is None:
            mask = np.ones(self.n)
        return self.net.hidden_output(encode_input(y, d, mask, self.m))

    def embed_batch(self, ys, ds, masks):
        self._require_trained()
        return self.net.hidden_output(encode_inputs(ys, ds, masks, self.m))

    def probabilities(self, y, d, mask=None):
        """Predicted P(symptom present) for every symptom."""
        if mask is None:
            mask = np.ones(self.n)
        return sigmoid(self.net(encode_input(y, d, mask, self.m)))

    def reconstruction_loss(self, base, rng):
        """Masked reconstruction BCE over one prefix mask per record."""
        rows = np.arange(len(base))
        masks = base.prefix_masks(rows, rng)
        x = encode_inputs(base.y, base.disease, masks, self.m)
        valid = base.y != 0
        loss, _ = masked_bce_loss(self.net(x), (base.y + 1) / 2.0, valid)
        return loss

    def save(self, path, hyper=None, data_hash=None):
        path = Path(path)
        self.net.save(path.with_suffix(".npz"))
        meta = {"n": self.n, "m": self.m, "trained": self.trained,
                "hyper": asdict(hyper) if hyper else None, "dataset_hash": data_hash,
                "final_loss": self.history[-1] if self.history else None}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        net = Mlp.load(path.with_suffix(".npz"))
        return cls(net, meta["n"], meta["m"], trained=meta["trained"])


def train_propensity(records, n, m, hyper=None, log_every=0):
    """Fit the masked-reconstruction objective with Adam and step decay."""
    hyper = hyper or PropensityHyper()
    base = records if isinstance(records, RecordBase) else RecordBase(records, n, m)
    if len(base) == 0:
        raise ValueError("cannot train on an empty record set")
    rng = np.random.default_rng(hyper.seed)
    model = PropensityModel.init(n, m, rng, hidden=hyper.hidden)
    targets_all = (base.y + 1) / 2.0
    observed_all = base.y != 0
    lr = hyper.lr
    for it in range(hyper.iterations):
        if it and hyper.lr_decay_every and it % hyper.lr_decay_every == 0:
            lr /= 10.0
        rows = rng.integers(0, len(base), size=hyper.batch_size)
        valid = observed_all[rows]
        if not valid.any():
            continue
        masks = base.prefix_masks(rows, rng)
        x = encode_inputs(base.y[rows], base.disease[rows], masks, m)
        logits, cache = model.net.forward(x)
        loss, grad = masked_bce_loss(logits, targets_all[rows], valid)
        adam_step(model.net, model.net.backward(cache, grad), lr)
        if log_every and it % log_every == 0:
            model.history.append(loss)
    model.trained = True
    return model


# -- matching -------------------------------------------------------------------

@dataclass
class MatchDistribution:
    candidates: np.ndarray  # indices into the record base
    weights: np.ndarray

    def __len__(self):
        return len(self.candidates)


def bandwidth(sq_dists):
    """Per-query kernel bandwidth: mean squared distance, floored."""
    return max(float(np.mean(sq_dists)), SIGMA2_FLOOR)


def kernel_weights(sq_dists, sigma2):
    """Normalised ``exp(-d / sigma^2)`` weights."""
    sq_dists = np.asarray(sq_dists, dtype=np.float64)
    logw = -(sq_dists - sq_dists.min()) / sigma2
    w = np.exp(logw)
    return w / w.sum()


def _anchor_vectors(anchor, n):
    y = to_existence_vector(anchor, n)
    return y, anchor.disease


def match_distribution(anchor, a, base, model):
    """Kernel distribution over same-disease records that observed ``a``.

    Candidates are embedded under the anchor's observation pattern; the
    anchor itself is embedded with all of its observed entries.
    """
    y_p, d_p = _anchor_vectors(anchor, base.n)
    if y_p[a] != 0:
        raise ValueError(f"symptom {a} is observed in the anchor; inquiry is factual")
    cands = np.flatnonzero((base.disease == d_p) & (base.y[:, a] != 0))
    if cands.size == 0:
        raise NoCandidates(f"no record with disease {d_p} observed symptom {a}")
    anchor_mask = (y_p != 0).astype(np.int8)
    e_p = model.embed(y_p, d_p)
    e_q = model.embed_batch(base.y[cands] * anchor_mask, base.disease[cands],
                            np.ones((cands.size, base.n), dtype=np.int8))
    sq = ((e_q - e_p) ** 2).sum(axis=1)
    return MatchDistribution(cands, kernel_weights(sq, bandwidth(sq)))


def sample_match(dist, rng):
    if len(dist) == 0:
        raise NoCandidates("empty match distribution")
    cum = np.cumsum(dist.weights)
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return int(dist.candidates[min(i, len(cum) - 1)])


class MatchTable:
    """All counterfactual match distributions for one anchor at once.

    Column ``a`` of ``cum`` is the cumulative kernel weight over ``cands``
    for inquiry ``a``; it equals :func:`match_distribution` restricted to the
    eligible rows (ineligible rows carry zero weight).
    """

    def __init__(self, anchor, base, model):
        y_p, d_p = _anchor_vectors(anchor, base.n)
        self.cands = np.flatnonzero(base.disease == d_p)
        eligible = base.y[self.cands] != 0
        self.eligible = eligible
        self.has_candidates = eligible.any(axis=0)
        anchor_mask = (y_p != 0).astype(np.int8)
        e_p = model.embed(y_p, d_p)
        e_q = model.embed_batch(base.y[self.cands] * anchor_mask, base.disease[self.cands],
                                np.ones((self.cands.size, base.n), dtype=np.int8))
        sq = ((e_q - e_p) ** 2).sum(axis=1)
        counts = eligible.sum(axis=0)
        sigma2 = np.maximum(sq @ eligible / np.maximum(counts, 1), SIGMA2_FLOOR)
        big = np.where(eligible, sq[:, None], np.inf)
        shift = np.where(self.has_candidates, big.min(axis=0), 0.0)
        w = np.where(eligible, np.exp(-(sq[:, None] - shift) / sigma2), 0.0)
        total = w.sum(axis=0)
        self.weights = np.divide(w, total, out=np.zeros_like(w), where=total > 0)
        self.cum = np.cumsum(self.weights, axis=0)

    def distribution(self, a):
        keep = self.eligible[:, a]
        return MatchDistribution(self.cands[keep], self.weights[keep, a])

    def sample(self, a, rng):
        if not self.has_candidates[a]:
            raise NoCandidates(f"no candidate for symptom {a}")
        col = self.cum[:, a]
        i = int(np.searchsorted(col, rng.random() * col[-1], side="right"))
        return int(self.cands[min(i, len(col) - 1)])
