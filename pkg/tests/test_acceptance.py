"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The trend criteria (5-7) train on the default synthetic benchmark and take
tens of minutes on one CPU core.
"""
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from counterfact_diag.cli import main as cli_main
from counterfact_diag.diagnosis import (BootstrapEnsemble, decision_threshold,
                                        ensemble_statistics)
from counterfact_diag.experiments import agent_trend, simulator_trend
from counterfact_diag.nn import Mlp, masked_bce_loss, softmax_ce_loss
from counterfact_diag.propensity import match_distribution
from gradcheck import network_gradient_error
from oracles import (brute_force_weights, tabular_chain_value, toy_base_case, train_chain,
                     two_pass_moments)

SEEDS = (0, 1, 2)
EPISODES = 20_000


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_gradient_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = []
    cases = [("classifier", None, "ce"), ("classifier", 3, "ce"),
             ("multi_class_classifier", None, "bce"), ("dueling_q", None, "linear")]
    for topology, stack, loss in cases:
        for _ in range(6):
            n_in, n_out = int(rng.integers(2, 7)), int(rng.integers(2, 6))
            hidden = tuple(int(h) for h in rng.integers(2, 8, size=2))
            net = Mlp.init(topology, n_in, n_out, rng, hidden=hidden, stack=stack)
            for p in net.params:
                p[...] = rng.normal(scale=0.6, size=p.shape)
            batch = int(rng.integers(1, 5))
            shape = (batch, n_in) if stack is None else (stack, batch, n_in)
            x = rng.normal(size=shape)
            out_shape = shape[:-1] + (n_out,)
            if loss == "ce":
                cls = rng.integers(0, n_out, size=out_shape[:-1])
                fn = lambda out, cls=cls: softmax_ce_loss(out, cls)
            elif loss == "bce":
                t = rng.integers(0, 2, size=out_shape).astype(float)
                v = rng.random(out_shape) < 0.8
                v.flat[0] = True
                fn = lambda out, t=t, v=v: masked_bce_loss(out, t, v)
            else:
                r = rng.normal(size=out_shape)
                fn = lambda out, r=r: (float((out * r).sum()), r)
            errors.append(network_gradient_error(net, x, fn))
    seconds = time.perf_counter() - start
    worst = max(errors)
    record(1, "gradient oracle", worst < 1e-4 and len(errors) >= 20 and seconds < 10,
           f"{len(errors)} instances, max rel err {worst:.2e}, {seconds:.1f}s")


def test_psm_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, bases = 0.0, 0
    while bases < 100:
        records, base, model, anchor, unobserved, n, m = toy_base_case(rng)
        answerable = [a for a in unobserved
                      if brute_force_weights(anchor, a, records, model, n, m)[0]]
        if not answerable:
            continue
        a = answerable[int(rng.integers(len(answerable)))]
        cands, weights = brute_force_weights(anchor, a, records, model, n, m)
        dist = match_distribution(anchor, a, base, model)
        assert dist.candidates.tolist() == cands
        worst = max(worst, float(np.max(np.abs(dist.weights - weights))))
        bases += 1
    seconds = time.perf_counter() - start
    record(2, "PSM oracle", worst < 1e-12 and seconds < 5,
           f"{bases} bases, max weight err {worst:.1e}, {seconds:.2f}s")


def test_decision_threshold_properties():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    arithmetic = (decision_threshold([0.6, 0.4], [0.0, 0.05]) is True
                  and decision_threshold([0.5, 0.5], [0.0, 0.0]) is False
                  and decision_threshold([0.7, 0.2, 0.1], [0.1, 0.2, 0.0]) is False)
    violations = 0
    for _ in range(300):
        m = int(rng.integers(2, 7))
        mu = rng.dirichlet(np.ones(m))
        sigma = rng.uniform(0, 0.05, size=m)
        base = decision_threshold(mu, sigma)
        perm = rng.permutation(m)
        violations += decision_threshold(mu[perm], sigma[perm]) != base
        j = int(rng.integers(m))
        if j != int(np.argmax(mu)):
            raised = sigma.copy()
            raised[j] += rng.uniform(0, 1)
            violations += (not base) and decision_threshold(mu, raised)
        tied = mu.copy()
        tied[np.argsort(mu)[-2]] = mu.max()
        violations += decision_threshold(tied, np.zeros(m))
    seconds = time.perf_counter() - start
    record(3, "decision threshold suite", arithmetic and violations == 0 and seconds < 1,
           f"arithmetic cases {'ok' if arithmetic else 'wrong'}, {violations} property "
           f"violations, {seconds:.3f}s")


def test_statistics_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        B, K, m, n = int(rng.integers(2, 6)), int(rng.integers(1, 11)), int(rng.integers(2, 7)), 5
        ens = BootstrapEnsemble.init(n, m, B, rng, hidden=6)
        for p in ens.net.params:
            p[...] = rng.normal(size=p.shape)
        finals = rng.choice([-1, 1], size=(K, n))
        stats = ensemble_statistics(ens, finals)
        mu, sigma = two_pass_moments(ens.probabilities(finals))
        worst = max(worst, float(np.max(np.abs(stats.mu - mu))),
                    float(np.max(np.abs(stats.sigma - sigma))))
    record(4, "statistics oracle", worst < 1e-12, f"100 cases, max err {worst:.1e}")


@pytest.mark.slow
def test_simulator_trend():
    trend = simulator_trend(SEEDS)
    sd_ps, sd_pbps = trend.mean("sd", "ps"), trend.mean("sd", "pbps")
    cd_ps, cd_pbps = trend.mean("cd", "ps"), trend.mean("cd", "pbps")
    ok = sd_pbps >= 3 * sd_ps and cd_pbps >= cd_ps + 0.05 and trend.seconds < 15 * 60
    record(5, "simulator trend", ok,
           f"SD pbps {sd_pbps:.3f} vs ps {sd_ps:.3f}; CD pbps {cd_pbps:.3f} vs ps {cd_ps:.3f}; "
           f"{trend.seconds / 60:.1f} min")


@pytest.fixture(scope="module")
def trend():
    return agent_trend(SEEDS, EPISODES)


@pytest.mark.slow
def test_agent_trend(trend):
    p2a = float(np.mean(trend.final("p2a", "success_rate")))
    p2a_dt = float(np.mean(trend.final("p2a", "success_rate_dt")))
    dqn = float(np.mean(trend.final("dqn", "success_rate")))
    ok = p2a >= dqn - 0.02 and p2a_dt >= p2a and trend.seconds < 45 * 60
    record(6, "agent trend", ok,
           f"P2A {p2a:.3f}, P2A-DT {p2a_dt:.3f}, DQN {dqn:.3f}; {trend.seconds / 60:.1f} min")


@pytest.mark.slow
def test_early_dt_reliability(trend):
    early = float(np.mean(trend.at("p2a", "success_rate_dt", 0.25)))
    final = float(np.mean(trend.final("p2a", "success_rate_dt")))
    record(7, "early DT reliability", abs(early - final) <= 0.10,
           f"P2A-DT at 25% {early:.3f}, final {final:.3f}")


def test_tabular_td_oracle():
    oracle = tabular_chain_value()
    learned = train_chain()
    ok = abs(oracle + 0.28525) < 1e-12 and abs(learned - oracle) < 1e-3
    record(8, "tabular TD oracle", ok, f"learned {learned:.5f} vs oracle {oracle:.5f}")


def test_pipeline_determinism(tmp_path):
    quick = ["--set", "eval_every=100", "--set", "eval_episodes=50",
             "--set", "warmup_rounds=300", "--set", 'propensity={"iterations": 2000}']
    outputs = []
    for rerun in ("a", "b"):
        root = tmp_path / rerun
        assert cli_main(["gen-data", "--seed", "7", "--out", str(root / "data")]) == 0
        assert cli_main(["train-agent", "--data-dir", str(root / "data"), "--episodes", "300",
                         "--seed", "5", "--out", str(root / "run"), *quick]) == 0
        manifest = json.loads((root / "run" / "manifest.json").read_text())
        manifest["config"].pop("data_dir")
        outputs.append(((root / "run" / "curves.csv").read_bytes(), manifest))
    same = outputs[0] == outputs[1]
    record(9, "determinism", same,
           f"curve CSVs {'byte-identical' if same else 'differ'} ({len(outputs[0][0])} bytes)")
