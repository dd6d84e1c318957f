"""Command-line entry point.

Errors are reported on stderr as one line ``error: <kind>: <message>`` with
exit status 1; argument errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .metrics import simulator_report
from .orchestrator import (AGENTS, ExperimentConfig, build_setup, curves_csv, evaluate,
                           jsonable, load_data, propensity_for, read_curves, summarize_seeds,
                           train_agent, train_sl_baseline)
from .nn import Mlp
from .simulator import TEMPLATES, Simulator, question, start_episode


class CliError(Exception):
    kind = "error"


class UsageError(CliError):
    kind = "usage"


class OutputExists(CliError):
    kind = "output_exists"


def _load_config(args):
    cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = json.loads(path.read_text())
    for key in ("seed", "setting", "simulator", "agent", "episodes", "data_dir"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for item in getattr(args, "set", None) or []:
        key, _, raw = item.partition("=")
        if not _:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw
    try:
        return ExperimentConfig.from_dict(cfg).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _prepare_out(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OutputExists(f"{out} exists; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, **payload):
    manifest = {"command": command, **payload}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _dump(obj):
    print(json.dumps(jsonable(obj), indent=2, sort_keys=True))


# -- subcommands --------------------------------------------------------------------

def cmd_gen_data(args):
    spec_arg = args.spec or "default"
    if spec_arg in data_mod.PRESETS:
        spec = data_mod.PRESETS[spec_arg]()
    else:
        path = Path(spec_arg)
        if not path.is_file():
            raise UsageError(f"spec is neither a preset nor a file: {spec_arg}")
        obj = json.loads(path.read_text())
        spec = data_mod.PRESETS[obj.pop("preset")]() if "preset" in obj else None
        if spec is None:
            spec = data_mod.SynthSpec.from_dict(obj)
        else:
            for k, v in obj.items():
                setattr(spec, k, v)
    seed = 7 if args.seed is None else args.seed
    out = _prepare_out(args.out, args.force)
    _write_manifest(out, "gen-data", spec=spec.to_dict(), seed=seed)
    train, test, vocabs = data_mod.synth_generate(spec, seed)
    digest = data_mod.save_dataset(out, train, test, vocabs)
    _dump({"train": len(train), "test": len(test), "n": vocabs.n, "m": vocabs.m,
           "dataset_hash": digest})


def cmd_train_propensity(args):
    config = _load_config(args)
    out = _prepare_out(args.out, args.force)
    data = load_data(config)
    pool = "all" if config.setting == "in" else "train"
    _write_manifest(out, "train-propensity", config=config.to_dict(), pool=pool,
                    dataset_hash=data.digest)
    records = data.train + data.test if pool == "all" else data.train
    model = propensity_for(config, records, data, 0 if pool == "all" else 1)
    model.save(out / "propensity", config.propensity, data.digest)
    _dump({"pool": pool, "records": len(records),
           "embedding_dim": model.embedding_dim})


def _train(args, agent):
    config = _load_config(args)
    config.agent = agent
    config.validate()
    out = _prepare_out(args.out, args.force)
    data = load_data(config)
    _write_manifest(out, f"train-{'baseline' if agent != 'p2a' else 'agent'}",
                    config=config.to_dict(), dataset_hash=data.digest, seed=config.seed,
                    cd_mask="uniform kept-count then uniform subset")
    if agent == "sl":
        result = train_sl_baseline(config, data=data, out_dir=out)
    else:
        result = train_agent(config, data=data, out_dir=out)
    _dump(result.summary)


def cmd_train_agent(args):
    agent = args.agent or "p2a"
    if agent == "sl":
        raise UsageError("sl is a baseline; use train-baseline")
    _train(args, agent)


def cmd_train_baseline(args):
    agent = args.agent or "dqn"
    if agent == "p2a":
        raise UsageError("p2a is not a baseline; use train-agent")
    _train(args, agent)


def _run_config(run):
    path = Path(run) / "manifest.json"
    if not path.is_file():
        raise UsageError(f"no manifest in {run}")
    return ExperimentConfig.from_dict(json.loads(path.read_text())["config"])


def cmd_evaluate(args):
    per_seed = []
    for run in args.run:
        config = _run_config(run)
        if args.setting:
            config.setting = args.setting
        if args.simulator:
            config.simulator = args.simulator
        data = load_data(config)
        setup = build_setup(config, data)
        ckpt = Path(run) / "checkpoints"
        if config.agent == "sl":
            agent = Mlp.load(ckpt / "classifier.npz")
        else:
            agent = AGENTS[config.agent].load(ckpt, data.n, data.m, config)
        row = evaluate(agent, setup, config, n_episodes=args.episodes)
        per_seed.append({"run": str(run), "seed": config.seed, **row})
    _dump(summarize_seeds(per_seed))


def cmd_metrics(args):
    config = _load_config(args)
    out = _prepare_out(args.out, args.force)
    data = load_data(config)
    kinds = [config.simulator] if args.simulator else ["ps", "gen", "pbps"]
    _write_manifest(out, "metrics", config=config.to_dict(), kinds=kinds,
                    dataset_hash=data.digest)
    models, reports = None, {}
    for kind in kinds:
        config.simulator = kind
        report, models = simulator_report(config, data, models)
        report.save(out / f"metrics_{kind}.json")
        reports[kind] = {"SD": report.symptom_density, "CD": report.coincidence_degree}
    _dump(reports)


def cmd_export_curves(args):
    rows = []
    for run in args.run:
        path = Path(run) / "curves.csv"
        if not path.is_file():
            raise UsageError(f"no curves.csv in {run}")
        rows.extend(read_curves(path))
    rows.sort(key=lambda r: (r["seed"], r["episode"]))
    text = curves_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_interact(args, stdin=None, stdout=None):
    """Blind side-by-side answers from several simulators for one anchor."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    config = _load_config(args)
    kinds = args.simulators.split(",")
    if not kinds or any(k not in ("ps", "gen", "pbps") for k in kinds):
        raise UsageError(f"bad simulator list {args.simulators!r}")
    data = load_data(config)
    seed = config.seed
    rng = np.random.default_rng(seed)
    models = None
    sessions = []
    for kind in kinds:
        config.simulator = kind
        setup = build_setup(config, data, models)
        models = setup.models
        sessions.append(setup.test_sim)
    anchors = data.test
    anchor = anchors[args.anchor if args.anchor is not None else int(rng.integers(len(anchors)))]
    sessions = [start_episode(sim, anchor, rng) for sim in sessions]
    symptoms = data.vocabs.symptoms
    transcript = {"seed": seed, "simulators": kinds, "anchor": anchor.rid, "turns": []}

    def emit(line):
        print(line, file=stdout)

    emit(f"Disease: {data.vocabs.diseases.names[anchor.disease]}")
    reported = ", ".join(f"{symptoms.names[a]}={'yes' if v else 'no'}"
                         for a, v in anchor.explicit.items())
    emit(f"Self-report: {reported or '(none)'}")
    for line in stdin:
        name = line.strip()
        if not name:
            continue
        if name in ("quit", "exit"):
            break
        if name not in symptoms.index:
            close = [s for s in symptoms.names if name in s or s in name][:5]
            emit(f"unknown symptom {name!r}; candidates: {', '.join(close) or '(none)'}")
            continue
        a = symptoms.index[name]
        answers = [int(s.step(a)[a]) for s in sessions]
        order = rng.permutation(len(sessions))
        emit(question(name))
        for slot, i in enumerate(order):
            emit(f"  [{chr(ord('A') + slot)}] {TEMPLATES[answers[i]]}")
        transcript["turns"].append({"symptom": name, "answers": dict(zip(kinds, answers)),
                                    "order": [kinds[i] for i in order]})
    if args.transcript:
        Path(args.transcript).write_text(json.dumps(transcript, indent=2) + "\n")
    return transcript


# -- parser -------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="counterfact-diag")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--setting", choices=("in", "out"))
        p.add_argument("--simulator", choices=("ps", "gen", "pbps"))
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config field (JSON value)")
        if out:
            p.add_argument("--out", required=True)
            p.add_argument("--force", action="store_true")

    p = sub.add_parser("gen-data")
    p.add_argument("--spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-propensity")
    common(p)
    p.set_defaults(func=cmd_train_propensity)

    for name, func, choices in (("train-agent", cmd_train_agent, ("p2a", "dqn")),
                                ("train-baseline", cmd_train_baseline, ("dqn", "sl"))):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--agent", choices=choices)
        p.add_argument("--episodes", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate")
    p.add_argument("--run", action="append", required=True)
    p.add_argument("--setting", choices=("in", "out"))
    p.add_argument("--simulator", choices=("ps", "gen", "pbps"))
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("metrics")
    common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export-curves")
    p.add_argument("--run", action="append", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_curves)

    p = sub.add_parser("interact")
    common(p, out=False)
    p.add_argument("--simulators", default="ps,pbps")
    p.add_argument("--anchor", type=int)
    p.add_argument("--transcript")
    p.set_defaults(func=cmd_interact)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, data_mod.RecordError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
