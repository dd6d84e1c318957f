"""Symptom density and coincidence degree of the PS and PBPS simulators over seeds."""
import argparse
import json

from counterfact_diag.experiments import simulator_trend


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--kinds", nargs="+", default=["ps", "pbps", "gen"])
    parser.add_argument("--out", help="optional JSON file for the per-seed values")
    args = parser.parse_args()
    trend = simulator_trend(args.seeds, args.kinds)
    for kind in args.kinds:
        print(f"{kind:5s} SD={trend.mean('sd', kind):.3f} CD={trend.mean('cd', kind):.3f}")
    print(f"total {trend.seconds / 60:.1f} min")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"sd": trend.sd, "cd": trend.cd, "seconds": trend.seconds}, fh, indent=2)


if __name__ == "__main__":
    main()
