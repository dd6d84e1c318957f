"""Multi-seed experiment drivers used by the scripts and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import simulator_report
from .orchestrator import (ExperimentConfig, build_setup, final_value, load_data, train_agent,
                           value_at)


@dataclass
class SimulatorTrend:
    sd: dict = field(default_factory=dict)   # kind -> per-seed values
    cd: dict = field(default_factory=dict)
    seconds: float = 0.0

    def mean(self, metric, kind):
        return float(np.mean(getattr(self, metric)[kind]))


def simulator_trend(seeds=(0, 1, 2), kinds=("ps", "pbps"), base=None, log=print):
    """SD and CD of each simulator kind on the training pool, per seed."""
    base = base or ExperimentConfig(setting="out")
    start = time.perf_counter()
    out = SimulatorTrend()
    data = load_data(base)
    for seed in seeds:
        models = None
        for kind in kinds:
            cfg = replace(base, seed=seed, simulator=kind)
            report, models = simulator_report(cfg, data, models)
            out.sd.setdefault(kind, []).append(report.symptom_density)
            out.cd.setdefault(kind, []).append(report.coincidence_degree)
            if log:
                log(f"seed={seed} {kind}: SD={report.symptom_density:.3f} "
                    f"CD={report.coincidence_degree:.3f}")
    out.seconds = time.perf_counter() - start
    return out


@dataclass
class AgentTrend:
    episodes: int
    curves: dict = field(default_factory=dict)   # agent -> list of per-seed curves
    seconds: float = 0.0

    def final(self, agent, key):
        return [final_value(c, key, self.episodes) for c in self.curves[agent]]

    def at(self, agent, key, fraction):
        episode = int(round(fraction * self.episodes))
        return [value_at(c, key, episode) for c in self.curves[agent]]


def agent_trend(seeds=(0, 1, 2), episodes=20_000, agents=("p2a", "dqn"), base=None, log=print):
    """Train every agent on a shared per-seed simulator and collect curves."""
    base = base or ExperimentConfig(setting="in", simulator="pbps")
    start = time.perf_counter()
    out = AgentTrend(episodes)
    data = load_data(base)
    for seed in seeds:
        setup = build_setup(replace(base, seed=seed), data)
        for agent in agents:
            cfg = replace(base, seed=seed, agent=agent, episodes=episodes)
            t0 = time.perf_counter()
            run = train_agent(cfg, data=data, setup=setup)
            out.curves.setdefault(agent, []).append(run.curve)
            if log:
                s = run.summary
                log(f"seed={seed} {agent}: success={s['final_success_rate']:.3f} "
                    f"dt_success={s['final_success_rate_dt']:.3f} "
                    f"dt_fraction={s['final_dt_fraction']:.3f} len={s['final_mean_len']:.2f} "
                    f"({time.perf_counter() - t0:.0f}s)")
    out.seconds = time.perf_counter() - start
    return out
