"""Diagnosis records: schema, JSONL ingestion, vector encodings, synthetic data.

Symptom answers use the codes ``-1`` (no), ``+1`` (yes) and ``0`` (unobserved
in a record, or "not sure" in a dialogue state). Dialogue states additionally
use ``-2`` for a symptom the agent has not asked about yet.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNVISITED = -2


class RecordError(ValueError):
    """A record could not be parsed or is inconsistent with the vocabulary."""


@dataclass(frozen=True)
class Vocabulary:
    names: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(set(names)) != len(names):
            raise ValueError("vocabulary names must be unique")
        object.__setattr__(self, "index", {name: i for i, name in enumerate(names)})

    def __len__(self):
        return len(self.names)

    def lookup(self, name):
        try:
            return self.index[name]
        except KeyError:
            raise RecordError(f"unknown name {name!r}") from None


@dataclass(frozen=True)
class Vocabs:
    symptoms: Vocabulary
    diseases: Vocabulary

    @property
    def n(self):
        return len(self.symptoms)

    @property
    def m(self):
        return len(self.diseases)

    def to_json(self):
        return json.dumps({"symptoms": list(self.symptoms.names),
                           "diseases": list(self.diseases.names)}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(Vocabulary(obj["symptoms"]), Vocabulary(obj["diseases"]))

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class DiagnosisRecord:
    """One patient episode with symptom slots resolved to vocabulary indices.

    ``implicit`` preserves insertion order, which is the order the symptoms
    surfaced in the original dialogue; ``order`` mirrors it as a tuple.
    """
    disease: int
    explicit: dict
    implicit: dict
    rid: str | None = None
    order: tuple = field(init=False)

    def __post_init__(self):
        overlap = set(self.explicit) & set(self.implicit)
        if overlap:
            raise RecordError(f"symptoms both explicit and implicit: {sorted(overlap)}")
        object.__setattr__(self, "order", tuple(self.implicit))

    @property
    def observed(self):
        return {**self.explicit, **self.implicit}


def parse_record(json_text, vocabs):
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise RecordError(f"malformed JSON: {e.msg}") from None
    if not isinstance(obj, dict):
        raise RecordError("record must be a JSON object")
    for key in ("disease_tag", "explicit_inform_slots", "implicit_inform_slots"):
        if key not in obj:
            raise RecordError(f"missing key {key!r}")

    def slots(raw):
        if not isinstance(raw, dict):
            raise RecordError("slots must be a JSON object")
        out = {}
        for name, value in raw.items():
            if not isinstance(value, bool):
                raise RecordError(f"slot {name!r} is not a boolean")
            out[vocabs.symptoms.lookup(name)] = value
        return out

    rid = obj.get("consult_id")
    return DiagnosisRecord(
        disease=vocabs.diseases.lookup(obj["disease_tag"]),
        explicit=slots(obj["explicit_inform_slots"]),
        implicit=slots(obj["implicit_inform_slots"]),
        rid=None if rid is None else str(rid),
    )


def serialize_record(record, vocabs):
    sym = vocabs.symptoms.names
    obj = {}
    if record.rid is not None:
        obj["consult_id"] = record.rid
    obj["disease_tag"] = vocabs.diseases.names[record.disease]
    obj["explicit_inform_slots"] = {sym[a]: v for a, v in record.explicit.items()}
    obj["implicit_inform_slots"] = {sym[a]: v for a, v in record.implicit.items()}
    return json.dumps(obj, ensure_ascii=False)


def read_jsonl(path, vocabs):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line, vocabs))
            except RecordError as e:
                raise RecordError(f"{path}:{lineno}: {e}") from None
    return records


def write_jsonl(path, records, vocabs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(serialize_record(rec, vocabs) + "\n")


def to_existence_vector(record, n):
    y = np.zeros(n, dtype=np.int8)
    for a, v in record.observed.items():
        y[a] = 1 if v else -1
    return y


def initial_state(record, n):
    s = np.full(n, UNVISITED, dtype=np.int8)
    for a, v in record.explicit.items():
        s[a] = 1 if v else -1
    return s


def sample_prefix_mask(record, n, rng, cut=None):
    """Keep explicit symptoms and the first ``cut`` implicit ones in order.

    ``cut`` is drawn uniformly from ``0..len(order)`` unless given. Entries of
    unobserved symptoms are 1 since masking them is a no-op.
    """
    order = record.order
    if cut is None:
        cut = int(rng.integers(0, len(order) + 1))
    mask = np.ones(n, dtype=np.int8)
    for a in order[cut:]:
        mask[a] = 0
    return mask


class RecordBase:
    """Array view over a list of records used by matching and batching.

    ``rank[i, a]`` is the position of symptom ``a`` in record ``i``'s implicit
    order, or -1 when ``a`` is explicit or unobserved.
    """

    def __init__(self, records, n, m):
        self.records = list(records)
        self.n, self.m = n, m
        size = len(self.records)
        self.y = np.zeros((size, n), dtype=np.int8)
        self.disease = np.zeros(size, dtype=np.int64)
        self.rank = np.full((size, n), -1, dtype=np.int64)
        self.n_implicit = np.zeros(size, dtype=np.int64)
        self.ids = []
        for i, rec in enumerate(self.records):
            self.y[i] = to_existence_vector(rec, n)
            self.disease[i] = rec.disease
            for pos, a in enumerate(rec.order):
                self.rank[i, a] = pos
            self.n_implicit[i] = len(rec.order)
            self.ids.append(rec.rid if rec.rid is not None else str(i))

    def __len__(self):
        return len(self.records)

    def prefix_masks(self, rows, rng):
        """Vectorised :func:`sample_prefix_mask` for the given row indices."""
        cuts = rng.integers(0, self.n_implicit[rows] + 1)
        return (self.rank[rows] < cuts[:, None]).astype(np.int8)


def dataset_hash(*paths):
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


# -- synthetic data -------------------------------------------------------------

@dataclass
class SynthSpec:
    """Parameters of the synthetic record generator.

    ``probs[d][a]`` is the probability that a patient with disease ``d`` has
    symptom ``a``. Each symptom is recorded independently with probability
    ``observation_rate``; the first ``ceil(explicit_fraction * k)`` of the
    ``k`` recorded symptoms (in shuffled order) are self-reported.
    """
    n: int
    m: int
    records_per_disease: int
    probs: list
    observation_rate: float = 0.15
    explicit_fraction: float = 0.2
    test_fraction: float = 0.2
    name: str = "synthetic"

    def validate(self):
        if self.n <= 0 or self.m <= 0:
            raise ValueError("n and m must be positive")
        if self.records_per_disease <= 0:
            raise ValueError("records_per_disease must be positive")
        table = np.asarray(self.probs, dtype=float)
        if table.shape != (self.m, self.n):
            raise ValueError(f"probability table shape {table.shape} != {(self.m, self.n)}")
        if np.any(table < 0) or np.any(table > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0 < self.observation_rate <= 1:
            raise ValueError("observation_rate must be in (0, 1]")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0, 1)")
        return table

    def to_dict(self):
        return {"name": self.name, "n": self.n, "m": self.m,
                "records_per_disease": self.records_per_disease,
                "observation_rate": self.observation_rate,
                "explicit_fraction": self.explicit_fraction,
                "test_fraction": self.test_fraction,
                "probs": [list(map(float, row)) for row in self.probs]}

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def default_spec(n=40, m=4, records_per_disease=150, observation_rate=0.15,
                 table_seed=0, name="default"):
    """A separable benchmark: each disease owns a block of likely symptoms.

    Symptoms are split into ``m`` signature blocks plus a shared block
    (the remainder). Block symptoms have presence 0.55-0.95 for their own
    disease and 0.02-0.25 otherwise; shared symptoms are 0.3-0.6 everywhere.
    """
    rng = np.random.default_rng(table_seed)
    block = max(1, (4 * n) // (5 * m))
    probs = rng.uniform(0.02, 0.25, size=(m, n))
    for d in range(m):
        probs[d, d * block:(d + 1) * block] = rng.uniform(0.55, 0.95, size=block)
    shared = slice(m * block, n)
    probs[:, shared] = rng.uniform(0.3, 0.6, size=(m, n - m * block))
    return SynthSpec(n=n, m=m, records_per_disease=records_per_disease,
                     probs=np.round(probs, 4).tolist(), observation_rate=observation_rate,
                     name=name)


PRESETS = {
    "default": lambda: default_spec(),
    # 586 train / 142 test records; 182 per disease with a 0.195 test split
    "mz": lambda: _resized(default_spec(n=66, m=4, records_per_disease=182, name="mz"), 142 / 728),
    # 421 train / 104 test records; 105 per disease
    "dx": lambda: _resized(default_spec(n=41, m=5, records_per_disease=105, name="dx"), 104 / 525),
}


def _resized(spec, test_fraction):
    spec.test_fraction = test_fraction
    return spec


def synth_generate(spec, seed):
    """Draw train/test records and vocabularies; deterministic for a seed."""
    table = spec.validate()
    rng = np.random.default_rng(seed)
    vocabs = Vocabs(Vocabulary([f"symptom_{a:02d}" for a in range(spec.n)]),
                    Vocabulary([f"disease_{d}" for d in range(spec.m)]))
    total = spec.m * spec.records_per_disease
    diseases = np.repeat(np.arange(spec.m), spec.records_per_disease)
    rng.shuffle(diseases)
    records = []
    for i, d in enumerate(diseases):
        present = rng.random(spec.n) < table[d]
        observed = np.flatnonzero(rng.random(spec.n) < spec.observation_rate)
        observed = rng.permutation(observed)
        k_explicit = math.ceil(spec.explicit_fraction * len(observed))
        explicit = {int(a): bool(present[a]) for a in observed[:k_explicit]}
        implicit = {int(a): bool(present[a]) for a in observed[k_explicit:]}
        records.append(DiagnosisRecord(int(d), explicit, implicit, rid=f"r{i:05d}"))
    n_test = int(round(spec.test_fraction * total))
    return records[n_test:], records[:n_test], vocabs


def load_dataset(data_dir):
    data_dir = Path(data_dir)
    vocabs = Vocabs.load(data_dir / "vocab.json")
    train = read_jsonl(data_dir / "train.jsonl", vocabs)
    test = read_jsonl(data_dir / "test.jsonl", vocabs)
    return train, test, vocabs


def save_dataset(data_dir, train, test, vocabs):
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(data_dir / "train.jsonl", train, vocabs)
    write_jsonl(data_dir / "test.jsonl", test, vocabs)
    (data_dir / "vocab.json").write_text(vocabs.to_json() + "\n", encoding="utf-8")
    return dataset_hash(data_dir / "train.jsonl", data_dir / "test.jsonl", data_dir / "vocab.json")
