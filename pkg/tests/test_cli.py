import io
import json
from types import SimpleNamespace

import pytest

from counterfact_diag.cli import cmd_interact, main
from counterfact_diag.data import default_spec

QUICK = ["--set", "eval_every=50", "--set", "eval_episodes=20", "--set", "warmup_rounds=50",
         "--set", "n_samples=8", "--set", "n_diagnosers=2", "--set", "hidden=16",
         "--set", 'propensity={"iterations": 200, "batch_size": 32, "hidden": 16}']


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(default_spec(n=12, m=3, records_per_disease=30,
                                            observation_rate=0.4).to_dict()))
    assert main(["gen-data", "--spec", str(spec), "--seed", "7", "--out", str(root / "data")]) == 0
    return root / "data"


def test_gen_data_outputs(data_dir):
    names = sorted(p.name for p in data_dir.iterdir())
    assert names == ["manifest.json", "test.jsonl", "train.jsonl", "vocab.json"]
    assert json.loads((data_dir / "manifest.json").read_text())["seed"] == 7


def test_refuses_to_overwrite(data_dir, capsys):
    assert main(["gen-data", "--out", str(data_dir)]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: output_exists:") and "\n" not in err


def test_force_overwrites_preset(tmp_path):
    out = tmp_path / "d"
    out.mkdir()
    (out / "stale").write_text("x")
    assert main(["gen-data", "--spec", "dx", "--out", str(out), "--force"]) == 0
    assert not (out / "stale").exists()


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    code = main(["train-agent", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: usage: config file not found")


def test_train_evaluate_export(tmp_path, data_dir, capsys):
    run = tmp_path / "run"
    args = ["train-agent", "--data-dir", str(data_dir), "--episodes", "100", "--seed", "2",
            "--out", str(run), *QUICK]
    assert main(args) == 0
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 2 and manifest["config"]["episodes"] == 100
    first = (run / "curves.csv").read_bytes()
    assert main(args + ["--force"]) == 0
    assert (run / "curves.csv").read_bytes() == first
    capsys.readouterr()
    assert main(["evaluate", "--run", str(run), "--setting", "out", "--episodes", "10"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["per_seed"][0]["seed"] == 2 and "success_rate" in summary["aggregate"]
    assert main(["export-curves", "--run", str(run)]) == 0
    assert capsys.readouterr().out.splitlines()[0].startswith("episode,success_rate")


def test_train_baselines(tmp_path, data_dir, capsys):
    assert main(["train-baseline", "--agent", "dqn", "--data-dir", str(data_dir), "--episodes", "60",
                 "--out", str(tmp_path / "dqn"), *QUICK]) == 0
    assert main(["train-baseline", "--agent", "sl", "--data-dir", str(data_dir), "--simulator", "ps",
                 "--set", "sl_states=300", "--set", "sl_iterations=200",
                 "--out", str(tmp_path / "sl"), *QUICK]) == 0
    assert (tmp_path / "sl" / "checkpoints" / "classifier.npz").is_file()
    with pytest.raises(SystemExit) as exc:
        main(["train-agent", "--agent", "sl", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2


def test_metrics_and_propensity_commands(tmp_path, data_dir, capsys):
    assert main(["train-propensity", "--data-dir", str(data_dir), "--setting", "out",
                 "--out", str(tmp_path / "prop"), *QUICK]) == 0
    assert (tmp_path / "prop" / "propensity.npz").is_file()
    assert main(["metrics", "--data-dir", str(data_dir), "--simulator", "ps",
                 "--set", "sl_states=200", "--set", "sl_iterations=100",
                 "--out", str(tmp_path / "met"), *QUICK]) == 0
    report = json.loads((tmp_path / "met" / "metrics_ps.json").read_text())
    assert 0 <= report["symptom_density"] <= 1


def interact(data_dir, lines, seed=3, anchor=0, transcript=None):
    args = SimpleNamespace(config=None, seed=seed, data_dir=str(data_dir), setting=None,
                           simulator=None, agent=None, episodes=None,
                           set=["propensity={\"iterations\": 200, \"hidden\": 16}"],
                           simulators="ps,pbps", anchor=anchor, transcript=transcript)
    out = io.StringIO()
    record = cmd_interact(args, stdin=io.StringIO("\n".join(lines) + "\n"), stdout=out)
    return record, out.getvalue()


def test_interact_blind_answers(tmp_path, data_dir):
    from counterfact_diag.data import load_dataset
    _, test, vocabs = load_dataset(data_dir)
    anchor = next(i for i, r in enumerate(test) if r.explicit)
    rec = test[anchor]
    explicit = vocabs.symptoms.names[next(iter(rec.explicit))]
    unobserved = [vocabs.symptoms.names[a] for a in range(vocabs.n) if a not in rec.observed]
    record, text = interact(data_dir, [explicit, *unobserved, "not_a_symptom"], anchor=anchor,
                            transcript=tmp_path / "t.json")
    turns = record["turns"]
    assert turns[0]["answers"]["ps"] == turns[0]["answers"]["pbps"] != 0
    for turn in turns[1:]:
        assert turn["answers"]["ps"] == 0
    assert any(t["answers"]["pbps"] != 0 for t in turns[1:])
    assert "candidates" in text and "[A]" in text and "[B]" in text
    assert "ps" not in text.split("Self-report")[1]
    again, _ = interact(data_dir, [explicit, *unobserved, "not_a_symptom"], anchor=anchor)
    assert again == json.loads((tmp_path / "t.json").read_text())
