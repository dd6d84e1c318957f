"""Final success rates of P2A, DQN and the SL classifier for one setting and simulator."""
import argparse
import json
from dataclasses import replace

from counterfact_diag.orchestrator import (ExperimentConfig, build_setup, load_data,
                                           summarize_seeds, train_agent, train_sl_baseline)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--episodes", type=int, default=20_000)
    parser.add_argument("--setting", choices=["in", "out"], default="out")
    parser.add_argument("--simulator", choices=["ps", "gen", "pbps"], default="pbps")
    parser.add_argument("--agents", nargs="+", default=["p2a", "dqn", "sl"])
    parser.add_argument("--out", help="optional JSON file for the aggregated results")
    args = parser.parse_args()
    base = ExperimentConfig(setting=args.setting, simulator=args.simulator, episodes=args.episodes)
    data = load_data(base)
    results = {agent: [] for agent in args.agents}
    for seed in args.seeds:
        setup = build_setup(replace(base, seed=seed), data)
        for agent in args.agents:
            cfg = replace(base, seed=seed, agent=agent)
            train = train_sl_baseline if agent == "sl" else train_agent
            summary = train(cfg, data=data, setup=setup).summary
            results[agent].append(summary)
            print(f"seed={seed} {agent}: {summary['final_success_rate']:.3f}", flush=True)
    table = {agent: summarize_seeds(rows) for agent, rows in results.items()}
    for agent, res in table.items():
        agg = res["aggregate"]["final_success_rate"]
        print(f"{agent:4s} {agg['mean']:.3f} +- {agg['std']:.3f} (n={agg['n']})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2, default=str)


if __name__ == "__main__":
    main()
