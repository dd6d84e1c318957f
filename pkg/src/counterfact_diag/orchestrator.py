"""Training loops for P2A and the DQN / SL baselines, plus evaluation.

Every run derives independent random streams from one master seed, so the
evaluation cadence never perturbs training trajectories.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (PRESETS, UNVISITED, RecordBase, dataset_hash, load_dataset,
                   synth_generate)
from .diagnosis import (BootstrapEnsemble, DiagnosisBuffer, GenerativeSampler,
                        decision_threshold, ensemble_statistics, sample_final_states,
                        train_bootstrap, train_sampler)
from .inquiry import (VISITED_PENALTY, QNetworkPair, ReplayBuffer, encode_q_input,
                      greedy, polyak_update, q_learning_gradients, select_action,
                      td_update)
from .nn import Mlp, adam_step, softmax, softmax_ce_loss
from .propensity import PropensityHyper, PropensityModel, train_propensity
from .simulator import Simulator, full_state, start_episode

log = logging.getLogger(__name__)

# stream ids for derive_rng
INIT, TRAIN, EVAL, PROPENSITY, FULL_STATES, TEST_STATES = range(1, 7)

CURVE_COLUMNS = ("episode", "success_rate", "success_rate_dt", "dt_fraction", "mean_len", "seed")


def jsonable(obj):
    """Replace non-finite floats by ``None`` so output stays strict JSON."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def derive_rng(seed, *keys):
    return np.random.default_rng([int(seed), *map(int, keys)])


@dataclass
class ExperimentConfig:
    data_dir: str | None = None
    synth: str = "default"
    data_seed: int = 7
    simulator: str = "pbps"
    setting: str = "in"
    agent: str = "p2a"
    episodes: int = 200_000
    max_turns: int | None = None
    epsilon: float = 0.1
    gamma: float = 0.95
    polyak: float = 0.99
    reward: float = -0.1
    n_samples: int = 50
    n_diagnosers: int = 10
    lr_policy: float = 1e-3
    lr_policy_decay_at: float = 0.5
    lr_diagnosis: float = 1e-3
    dq_capacity: int = 50_000
    dc_capacity: int = 1280
    batch_size: int = 32
    warmup_rounds: int = 6000
    target_every: int = 10
    eval_every: int = 1000
    eval_episodes: int = 200
    hidden: int = 64
    terminal_transitions: bool = True
    gen_band: float | None = None
    dqn_rewards: tuple = (1.0, -1.0, -0.1)
    sl_states: int = 30_000
    sl_iterations: int = 100_000
    sl_lr: float = 1e-3
    sl_decay_every: int = 40_000
    seed: int = 0
    propensity: PropensityHyper = field(default_factory=PropensityHyper)

    def validate(self):
        if self.simulator not in ("ps", "gen", "pbps"):
            raise ValueError(f"unknown simulator {self.simulator!r}")
        if self.setting not in ("in", "out"):
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.agent not in ("p2a", "dqn", "sl"):
            raise ValueError(f"unknown agent {self.agent!r}")
        if self.n_samples < 1 or self.n_diagnosers < 2:
            raise ValueError("need K >= 1 samples and B >= 2 diagnosers")
        if self.max_turns is not None and self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.episodes < 1 or self.eval_every < 1:
            raise ValueError("episodes and eval_every must be positive")
        if self.data_dir is None and self.synth not in PRESETS:
            raise ValueError(f"unknown synthetic preset {self.synth!r}")
        return self

    def turns(self, n):
        return self.max_turns if self.max_turns is not None else math.ceil(n / 3)

    def to_dict(self):
        d = asdict(self)
        d["dqn_rewards"] = list(self.dqn_rewards)
        return d

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(obj.get("propensity"), dict):
            obj["propensity"] = PropensityHyper(**obj["propensity"])
        if "dqn_rewards" in obj:
            obj["dqn_rewards"] = tuple(obj["dqn_rewards"])
        return cls(**obj)


@dataclass
class Dataset:
    train: list
    test: list
    vocabs: object
    digest: str

    @property
    def n(self):
        return self.vocabs.n

    @property
    def m(self):
        return self.vocabs.m


def load_data(config):
    if config.data_dir is not None:
        d = Path(config.data_dir)
        train, test, vocabs = load_dataset(d)
        digest = dataset_hash(d / "train.jsonl", d / "test.jsonl", d / "vocab.json")
    else:
        spec = PRESETS[config.synth]()
        train, test, vocabs = synth_generate(spec, config.data_seed)
        digest = f"synth:{config.synth}:{config.data_seed}"
    return Dataset(train, test, vocabs, digest)


# -- simulators per setting -------------------------------------------------------

@dataclass
class Setup:
    train_sim: Simulator
    train_anchors: list
    test_sim: Simulator
    test_anchors: list
    models: dict


def propensity_for(config, records, data, pool):
    hyper = PropensityHyper(**{**asdict(config.propensity),
                               "seed": int(derive_rng(config.seed, PROPENSITY, pool).integers(2**31))})
    return train_propensity(RecordBase(records, data.n, data.m), data.n, data.m, hyper)


def build_setup(config, data, models=None):
    """Training/testing simulators for the In. or Out. setting.

    In.: both simulators answer from all records. Out.: training answers only
    from training records; testing uses all records with test anchors.
    """
    models = dict(models or {})
    kind = config.simulator
    everything = data.train + data.test
    base_all = RecordBase(everything, data.n, data.m)
    need_model = kind in ("gen", "pbps")
    if need_model and "all" not in models:
        models["all"] = propensity_for(config, everything, data, 0)
    test_sim = Simulator(kind, base_all, models.get("all"), gen_band=config.gen_band)
    if config.setting == "in":
        return Setup(test_sim, everything, test_sim, data.test, models)
    base_train = RecordBase(data.train, data.n, data.m)
    if need_model and "train" not in models:
        models["train"] = propensity_for(config, data.train, data, 1)
    train_sim = Simulator(kind, base_train, models.get("train"), gen_band=config.gen_band)
    return Setup(train_sim, data.train, test_sim, data.test, models)


# -- episodes -----------------------------------------------------------------------

@dataclass
class EpisodeOutcome:
    anchor_id: str | None
    steps: int
    informed: int
    correct: bool
    dt_met: bool
    trajectory_length: int


class P2AAgent:
    """Diagnosis branch (sampler + bootstrap ensemble) and inquiry branch."""

    name = "p2a"

    def __init__(self, n, m, config, rng):
        self.n, self.m = n, m
        self.config = config
        h = config.hidden
        self.sampler = GenerativeSampler.init(n, rng, hidden=h)
        self.ensemble = BootstrapEnsemble.init(n, m, config.n_diagnosers, rng, hidden=h)
        self.q = QNetworkPair.init(2 * n + m, n, rng, hidden=h, alpha=config.polyak)
        self.dc = DiagnosisBuffer(n, config.dc_capacity)
        self.dq = ReplayBuffer.for_p2a(n, m, config.dq_capacity)
        self.rounds = 0
        self.lr_policy = config.lr_policy

    @property
    def warming_up(self):
        return self.rounds < self.config.warmup_rounds

    def statistics(self, s, rng):
        finals = sample_final_states(self.sampler, s, self.config.n_samples, rng)
        return ensemble_statistics(self.ensemble, finals)

    def after_round(self, rng):
        self.rounds += 1
        if not self.warming_up:
            self.learn(rng)

    def learn(self, rng):
        cfg = self.config
        if len(self.dq) >= cfg.batch_size:
            td_update(self.q, self.dq.sample(cfg.batch_size, rng), cfg.gamma, cfg.reward,
                      self.lr_policy)
        if self.rounds % cfg.target_every == 0:
            polyak_update(self.q)
        if len(self.dc):
            states = self.dc.states[:len(self.dc)]
            labels = self.dc.labels[:len(self.dc)]
            rows = rng.integers(0, len(states), size=cfg.batch_size)
            train_sampler(self.sampler, states[rows], rng, cfg.lr_diagnosis)
            train_bootstrap(self.ensemble, states, labels, rng, cfg.batch_size,
                            cfg.lr_diagnosis, sampler=self.sampler)

    def episode(self, session, T, epsilon, rng, train=False):
        return run_episode(self, session, T, epsilon, rng, train)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.sampler.net.save(directory / "sampler.npz")
        self.ensemble.net.save(directory / "ensemble.npz")
        self.q.online.save(directory / "q_online.npz")
        self.q.target.save(directory / "q_target.npz")
        (directory / "ensemble.json").write_text(json.dumps(
            {"B": self.config.n_diagnosers, "K": self.config.n_samples,
             "rounds": self.rounds, "seed": self.config.seed}, indent=2) + "\n")

    @classmethod
    def load(cls, directory, n, m, config):
        directory = Path(directory)
        agent = cls(n, m, config, np.random.default_rng(0))
        agent.sampler.net = Mlp.load(directory / "sampler.npz")
        agent.ensemble.net = Mlp.load(directory / "ensemble.npz")
        agent.q.online = Mlp.load(directory / "q_online.npz")
        agent.q.target = Mlp.load(directory / "q_target.npz")
        agent.rounds = json.loads((directory / "ensemble.json").read_text())["rounds"]
        return agent


def run_episode(agent, session, T, epsilon, rng, train=False):
    """Inquire until the decision threshold holds or ``T`` rounds pass.

    With ``train`` set, transitions go to the replay buffer, the terminal
    state goes to the diagnosis buffer and one learning round runs after
    every environment round.
    """
    anchor = session.anchor
    s = session.state.copy()
    prev = None
    for t in range(T + 1):
        stats = agent.statistics(s, rng)
        dt = decision_threshold(stats.mu, stats.sigma)
        stop = dt or t == T or not np.any(s == UNVISITED)
        if train and prev is not None and (not stop or agent.config.terminal_transitions):
            agent.dq.push(s_prev=prev[0], mu_prev=prev[1], action=prev[2], s=s,
                          mu=stats.mu, terminal=stop)
        if stop:
            informed = int(np.argmax(stats.mu))
            if train:
                agent.dc.push(s, anchor.disease)
                agent.after_round(rng)
            return EpisodeOutcome(anchor.rid, t + 1, informed, informed == anchor.disease, dt, t)
        eps = 1.0 if train and agent.warming_up else epsilon
        a = select_action(agent.q, s, stats.mu, eps, rng)
        prev = (s, stats.mu, a)
        s = session.step(a).copy()
        if train:
            agent.after_round(rng)
    raise AssertionError("episode loop exited without informing")


class DqnAgent:
    """Single dueling policy over ``n`` inquiries followed by ``m`` diagnoses."""

    name = "dqn"

    def __init__(self, n, m, config, rng):
        self.n, self.m = n, m
        self.config = config
        self.q = QNetworkPair.init(2 * n, n + m, rng, hidden=config.hidden, alpha=config.polyak)
        self.dq = ReplayBuffer(config.dq_capacity, {
            "s_prev": ((n,), np.int8), "action": ((), np.int64), "reward": ((), np.float64),
            "s": ((n,), np.int8), "next_legal": ((n + m,), bool), "terminal": ((), bool)})
        self.rounds = 0
        self.lr_policy = config.lr_policy

    warming_up = P2AAgent.warming_up

    def encode(self, s):
        s = np.asarray(s, dtype=np.float64)
        return np.concatenate([s, (s != UNVISITED).astype(np.float64)], axis=-1)

    def legal(self, s, t, T):
        inquiries = (s == UNVISITED) & (t < T)
        return np.concatenate([inquiries, np.ones(self.m, dtype=bool)])

    def q_values(self, s):
        q = self.q.online(self.encode(s))
        q[:self.n] -= VISITED_PENALTY * (s != UNVISITED)
        return q

    def after_round(self, rng):
        self.rounds += 1
        if self.warming_up:
            return
        cfg = self.config
        if len(self.dq) >= cfg.batch_size:
            b = self.dq.sample(cfg.batch_size, rng)
            _, grads = q_learning_gradients(
                self.q.online, self.q.target, self.encode(b["s_prev"]), b["action"],
                b["reward"], self.encode(b["s"]), b["next_legal"], b["terminal"], cfg.gamma)
            adam_step(self.q.online, grads, self.lr_policy)
        if self.rounds % cfg.target_every == 0:
            polyak_update(self.q)

    def episode(self, session, T, epsilon, rng, train=False):
        anchor = session.anchor
        n = self.n
        r_correct, r_wrong, r_step = self.config.dqn_rewards
        s = session.state.copy()
        for t in range(T + 1):
            legal = self.legal(s, t, T)
            eps = 1.0 if train and self.warming_up else epsilon
            if eps > 0 and rng.random() < eps:
                choices = np.flatnonzero(legal)
                a = int(choices[rng.integers(choices.size)])
            else:
                a = greedy(self.q_values(s), legal)
            if a >= n:
                informed = a - n
                correct = informed == anchor.disease
                if train:
                    self.dq.push(s_prev=s, action=a, reward=r_correct if correct else r_wrong,
                                 s=s, next_legal=legal, terminal=True)
                    self.after_round(rng)
                return EpisodeOutcome(anchor.rid, t + 1, informed, correct, False, t)
            s_next = session.step(a).copy()
            if train:
                self.dq.push(s_prev=s, action=a, reward=r_step, s=s_next,
                             next_legal=self.legal(s_next, t + 1, T), terminal=False)
                self.after_round(rng)
            s = s_next
        raise AssertionError("episode loop exited without informing")

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.q.online.save(directory / "q_online.npz")
        self.q.target.save(directory / "q_target.npz")
        (directory / "agent.json").write_text(json.dumps({"rounds": self.rounds}) + "\n")

    @classmethod
    def load(cls, directory, n, m, config):
        directory = Path(directory)
        agent = cls(n, m, config, np.random.default_rng(0))
        agent.q.online = Mlp.load(directory / "q_online.npz")
        agent.q.target = Mlp.load(directory / "q_target.npz")
        agent.rounds = json.loads((directory / "agent.json").read_text())["rounds"]
        return agent


AGENTS = {"p2a": P2AAgent, "dqn": DqnAgent}


# -- evaluation ---------------------------------------------------------------------

def evaluate_agent(agent, simulator, anchors, n_episodes, T, rng):
    """Greedy episodes over ``anchors`` (cycled in shuffled order)."""
    order = rng.permutation(len(anchors))
    outcomes = []
    for i in range(n_episodes):
        anchor = anchors[order[i % len(order)]]
        session = start_episode(simulator, anchor, rng)
        outcomes.append(agent.episode(session, T, 0.0, rng, train=False))
    return summarize_outcomes(outcomes, dt_applicable=agent.name == "p2a")


def summarize_outcomes(outcomes, dt_applicable=True):
    correct = np.array([o.correct for o in outcomes], dtype=float)
    dt = np.array([o.dt_met for o in outcomes], dtype=bool)
    row = {"success_rate": float(correct.mean()),
           "success_rate_dt": float("nan"),
           "dt_fraction": float("nan"),
           "mean_len": float(np.mean([o.trajectory_length for o in outcomes]))}
    if dt_applicable:
        row["dt_fraction"] = float(dt.mean())
        if dt.any():
            row["success_rate_dt"] = float(correct[dt].mean())
    return row


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def curves_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CURVE_COLUMNS])
    return buf.getvalue()


def read_curves(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k in ("episode", "seed") else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def final_value(rows, key, total_episodes, window=0.1):
    """Mean of ``key`` over evaluation points in the last ``window`` of training."""
    cutoff = total_episodes * (1.0 - window)
    vals = [r[key] for r in rows if r["episode"] > cutoff and np.isfinite(r[key])]
    if not vals:
        vals = [r[key] for r in rows[-1:] if np.isfinite(r[key])]
    return float(np.mean(vals)) if vals else float("nan")


def value_at(rows, key, episode):
    """Value at the first evaluation point at or after ``episode``."""
    for r in rows:
        if r["episode"] >= episode:
            return r[key]
    return rows[-1][key]


# -- training -----------------------------------------------------------------------

@dataclass
class RunArtifacts:
    config: ExperimentConfig
    agent: object
    curve: list
    summary: dict
    setup: Setup


def train_agent(config, data=None, setup=None, out_dir=None, progress=None):
    """Train P2A or the DQN baseline for ``config.episodes`` episodes."""
    config.validate()
    data = data or load_data(config)
    setup = setup or build_setup(config, data)
    n, m = data.n, data.m
    T = config.turns(n)
    agent = AGENTS[config.agent](n, m, config, derive_rng(config.seed, INIT))
    rng = derive_rng(config.seed, TRAIN)
    decay_after = int(config.lr_policy_decay_at * config.episodes)
    curve = []
    for ep in range(1, config.episodes + 1):
        if ep == decay_after + 1:
            agent.lr_policy = config.lr_policy / 10.0
        anchor = setup.train_anchors[int(rng.integers(len(setup.train_anchors)))]
        session = start_episode(setup.train_sim, anchor, rng)
        agent.episode(session, T, config.epsilon, rng, train=True)
        if ep % config.eval_every == 0 or ep == config.episodes:
            row = evaluate_agent(agent, setup.test_sim, setup.test_anchors,
                                 config.eval_episodes, T, derive_rng(config.seed, EVAL, ep))
            curve.append({"episode": ep, **row, "seed": config.seed})
            if progress:
                progress(curve[-1])
    summary = {
        "agent": config.agent, "setting": config.setting, "seed": config.seed,
        "episodes": config.episodes,
        "final_success_rate": final_value(curve, "success_rate", config.episodes),
        "final_success_rate_dt": final_value(curve, "success_rate_dt", config.episodes),
        "final_dt_fraction": final_value(curve, "dt_fraction", config.episodes),
        "final_mean_len": final_value(curve, "mean_len", config.episodes),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "curves.csv").write_text(curves_csv(curve))
        (out_dir / "summary.json").write_text(json.dumps(jsonable(summary), indent=2) + "\n")
        agent.save(out_dir / "checkpoints")
    return RunArtifacts(config, agent, curve, summary, setup)


def train_p2a(config, **kw):
    config.agent = "p2a"
    return train_agent(config, **kw)


def train_dqn_baseline(config, **kw):
    config.agent = "dqn"
    return train_agent(config, **kw)


# -- supervised baseline ------------------------------------------------------------

def collect_full_states(simulator, anchors, count, rng):
    rows = rng.integers(0, len(anchors), size=count)
    states = np.empty((count, simulator.n), dtype=np.int8)
    labels = np.empty(count, dtype=np.int64)
    for i, r in enumerate(rows):
        states[i] = full_state(simulator, anchors[r], rng)
        labels[i] = anchors[r].disease
    return states, labels


def random_observation_mask(shape, rng):
    """Keep a uniformly sized, uniformly chosen subset of entries per row."""
    n = shape[-1]
    keep_count = rng.integers(0, n + 1, size=shape[:-1])
    ranks = np.argsort(np.argsort(rng.random(shape), axis=-1), axis=-1)
    return ranks < keep_count[..., None]


def train_classifier(states, labels, m, rng, n_models=1, iterations=100_000, batch_size=32,
                     lr=1e-3, decay_every=40_000, augment=True, hidden=64):
    """Bootstrap classifiers on full states with random-mask augmentation."""
    states = np.asarray(states, dtype=np.float64)
    net = Mlp.init("classifier", states.shape[1], m, rng, hidden=(hidden, hidden), stack=n_models)
    for it in range(iterations):
        if it and decay_every and it % decay_every == 0:
            lr /= 10.0
        rows = rng.integers(0, len(states), size=(n_models, batch_size))
        x = states[rows]
        if augment:
            x = np.where(random_observation_mask(x.shape, rng), x, 0.0)
        logits, cache = net.forward(x)
        _, grad = softmax_ce_loss(logits, labels[rows])
        adam_step(net, net.backward(cache, grad), lr)
    return net


def classifier_predict(net, states):
    """Argmax of the ensemble-mean softmax."""
    x = np.where(np.asarray(states) == UNVISITED, 0.0, np.asarray(states, dtype=np.float64))
    probs = softmax(net(np.atleast_2d(x)))
    return np.argmax(probs.mean(axis=0), axis=-1)


def train_sl_baseline(config, data=None, setup=None, out_dir=None):
    config.agent = "sl"
    config.validate()
    data = data or load_data(config)
    setup = setup or build_setup(config, data)
    rng = derive_rng(config.seed, FULL_STATES)
    states, labels = collect_full_states(setup.train_sim, setup.train_anchors, config.sl_states, rng)
    net = train_classifier(states, labels, data.m, derive_rng(config.seed, INIT),
                           n_models=config.n_diagnosers, iterations=config.sl_iterations,
                           batch_size=config.batch_size, lr=config.sl_lr,
                           decay_every=config.sl_decay_every, hidden=config.hidden)
    test_rng = derive_rng(config.seed, TEST_STATES)
    test_states = np.stack([full_state(setup.test_sim, a, test_rng) for a in setup.test_anchors])
    test_labels = np.array([a.disease for a in setup.test_anchors])
    accuracy = float(np.mean(classifier_predict(net, test_states) == test_labels))
    summary = {"agent": "sl", "setting": config.setting, "seed": config.seed,
               "final_success_rate": accuracy}
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        net.save(out_dir / "checkpoints" / "classifier.npz")
        (out_dir / "summary.json").write_text(json.dumps(jsonable(summary), indent=2) + "\n")
    return RunArtifacts(config, net, [], summary, setup)


# -- aggregation --------------------------------------------------------------------

def aggregate(values):
    vals = np.array([v for v in values if np.isfinite(v)], dtype=float)
    if vals.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "n": 0}
    return {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}


def evaluate(agent, setting_setup, config, n_episodes=None, seed=None):
    """Success-rate summary of a trained agent or SL classifier on test anchors."""
    seed = config.seed if seed is None else seed
    T = config.turns(setting_setup.test_sim.n)
    rng = derive_rng(seed, EVAL, 0)
    if isinstance(agent, Mlp):
        states = np.stack([full_state(setting_setup.test_sim, a, rng) for a in setting_setup.test_anchors])
        labels = np.array([a.disease for a in setting_setup.test_anchors])
        acc = float(np.mean(classifier_predict(agent, states) == labels))
        return {"success_rate": acc, "success_rate_dt": float("nan"),
                "dt_fraction": float("nan"), "mean_len": float(setting_setup.test_sim.n)}
    return evaluate_agent(agent, setting_setup.test_sim, setting_setup.test_anchors,
                          n_episodes or config.eval_episodes, T, rng)


def summarize_seeds(per_seed):
    """``per_seed`` is a list of metric dicts; aggregate every numeric key."""
    keys = [k for k in per_seed[0] if isinstance(per_seed[0][k], (int, float)) and k != "seed"]
    return {"per_seed": per_seed, "aggregate": {k: aggregate([p[k] for p in per_seed]) for k in keys}}
