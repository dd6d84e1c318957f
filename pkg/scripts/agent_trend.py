"""Train P2A and the DQN baseline on a shared simulator per seed and compare curves."""
import argparse
import csv

import numpy as np

from counterfact_diag.experiments import agent_trend
from counterfact_diag.orchestrator import CURVE_COLUMNS, ExperimentConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--episodes", type=int, default=20_000)
    parser.add_argument("--setting", choices=["in", "out"], default="in")
    parser.add_argument("--simulator", choices=["ps", "gen", "pbps"], default="pbps")
    parser.add_argument("--out", help="optional CSV with every curve row, tagged by agent")
    args = parser.parse_args()
    base = ExperimentConfig(setting=args.setting, simulator=args.simulator)
    trend = agent_trend(args.seeds, args.episodes, base=base)
    for agent in trend.curves:
        final = np.mean(trend.final(agent, "success_rate"))
        line = f"{agent:4s} final success {final:.3f}"
        if agent == "p2a":
            dt = np.mean(trend.final(agent, "success_rate_dt"))
            early = np.mean(trend.at(agent, "success_rate_dt", 0.25))
            line += f", with DT {dt:.3f}, with DT at 25% {early:.3f}"
        print(line)
    print(f"total {trend.seconds / 60:.1f} min")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, ["agent", *CURVE_COLUMNS])
            writer.writeheader()
            for agent, curves in trend.curves.items():
                for curve in curves:
                    for row in curve:
                        writer.writerow({"agent": agent, **row})


if __name__ == "__main__":
    main()
