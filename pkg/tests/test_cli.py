import argparse
import csv
import hashlib
import json

import pytest

from navmorph import cli
from navmorph.errors import ConfigError
from navmorph.io import read_jsonl

TINY = ["--d-x", "4", "--d-h", "6", "--d-s", "3", "--d-a", "3", "--hidden", "8",
        "--n-m", "16", "--k", "4", "--n-train", "3", "--n-val-seen", "2", "--n-val-unseen", "2"]


def _args(**values):
    ns = argparse.Namespace(config=None)
    for key in cli.ALL_KEYS:
        setattr(ns, key, values.get(key))
    if "config" in values:
        ns.config = values["config"]
    return ns


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert cli.main(["train", "--out", str(out), "--episodes", "3", *TINY]) == 0
    return out


# -- settings -------------------------------------------------------------------------

def test_config_parsing_handles_comments_and_types():
    values = cli.parse_config_text("# header\nepisodes = 7  # trailing\n\nalpha=0.5\nself_evolve = false\n")
    assert values == {"episodes": 7, "alpha": 0.5, "self_evolve": False}


@pytest.mark.parametrize("text, fragment", [
    ("bogus = 1\n", "unknown key 'bogus'"),
    ("episodes = 1\nepisodes = 2\n", "duplicate key"),
    ("episodes\n", "expected key = value"),
    ("episodes = many\n", "cannot parse"),
])
def test_config_errors_name_the_line(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        cli.parse_config_text(text, "run.cfg")


def test_precedence_is_flag_then_env_then_file_then_default(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 11\nepisodes = 5\nalpha = 0.25\n")
    got = cli.resolve_settings(_args(config=str(cfg), alpha="0.5"), {"NAVMORPH_SEED": "13"})
    assert got["alpha"] == 0.5          # flag beats file
    assert got["seed"] == 13            # env beats file
    assert got["episodes"] == 5         # file beats default
    assert got["horizon"] == 2          # default
    assert cli.resolve_settings(_args(seed="17"), {"NAVMORPH_SEED": "13"})["seed"] == 17
    assert cli.resolve_settings(_args(), {})["seed"] == 0


def test_missing_config_file_reports_path(tmp_path, capsys):
    missing = tmp_path / "absent.cfg"
    assert cli.main(["gradcheck", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_key_and_bad_flags_exit_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    assert cli.main(["gradcheck", "--config", str(cfg)]) == 2
    assert cli.main(["gradcheck", "--no-such-flag"]) == 2
    assert cli.main(["train", "--out", str(tmp_path / "o"), "--alpha", "2"]) == 2
    assert cli.main(["eval", "--out", str(tmp_path / "o")]) == 2
    capsys.readouterr()


def test_help_lists_every_setting(capsys):
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["train", "--help"])
    text = capsys.readouterr().out
    for key in cli.ALL_KEYS:
        assert f"--{key.replace('_', '-')}" in text


# -- commands -------------------------------------------------------------------------

def test_train_writes_outputs(trained_dir):
    for name in ("manifest.json", "checkpoint.json", "cem.json", "metrics.jsonl",
                 "config.resolved", "loss_curve.png"):
        assert (trained_dir / name).exists(), name
    log = read_jsonl(trained_dir / "metrics.jsonl")
    assert [r["step"] for r in log] == [1, 2, 3]
    assert not (trained_dir / ".navmorph.lock").exists()


def test_frozen_eval_never_touches_memory_and_metrics_round_trip(trained_dir, tmp_path, capsys):
    snapshot = trained_dir / "cem.json"
    before = _sha(snapshot)
    out = tmp_path / "eval"
    common = ["--checkpoint", str(trained_dir / "checkpoint.json"), "--cem", str(snapshot),
              "--manifest", str(trained_dir / "manifest.json")]
    assert cli.main(["eval", "--out", str(out), "--self-evolve", "false", *common]) == 0
    assert _sha(snapshot) == before
    assert not (out / "cem_evolved.json").exists()
    for name in ("trajectories.jsonl", "metrics.csv", "summary.json", "trajectories.png"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())

    capsys.readouterr()
    assert cli.main(["metrics", "--trajectories", str(out / "trajectories.jsonl"),
                     "--manifest", str(trained_dir / "manifest.json")]) == 0
    recomputed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert recomputed["aggregate"] == summary["aggregate"]

    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert rows[-1]["episode_id"] == "aggregate"
    assert len(rows) == summary["episodes"] + 1

    evolved = tmp_path / "eval_evolve"
    assert cli.main(["eval", "--out", str(evolved), *common]) == 0
    assert (evolved / "cem_evolved.json").exists()
    assert _sha(snapshot) == before


def test_eval_seed_from_environment(trained_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("NAVMORPH_SEED", "9")
    out = tmp_path / "eval"
    assert cli.main(["eval", "--out", str(out), "--self-evolve", "false",
                     "--checkpoint", str(trained_dir / "checkpoint.json"),
                     "--cem", str(trained_dir / "cem.json"),
                     "--manifest", str(trained_dir / "manifest.json")]) == 0
    assert json.loads((out / "summary.json").read_text())["seed"] == 9
    capsys.readouterr()


def test_metrics_rejects_unknown_episodes(trained_dir, tmp_path, capsys):
    log = tmp_path / "t.jsonl"
    log.write_text(json.dumps({"episode_id": "nowhere-0000", "scene_seed": 0, "step": 0,
                               "position": [1.0, 1.0], "action": [0.0, 0.0],
                               "teacher_action": None, "done": True}) + "\n")
    assert cli.main(["metrics", "--trajectories", str(log),
                     "--manifest", str(trained_dir / "manifest.json")]) == 2
    log.write_text("{not json\n")
    assert cli.main(["metrics", "--trajectories", str(log),
                     "--manifest", str(trained_dir / "manifest.json")]) == 2
    assert "t.jsonl:1" in capsys.readouterr().err


def test_held_lock_refuses_to_run(tmp_path, capsys):
    (tmp_path / ".navmorph.lock").write_text("1\n")
    assert cli.main(["train", "--out", str(tmp_path), "--episodes", "0", *TINY]) == 2
    assert "lock" in capsys.readouterr().err


def test_sweep_writes_table_and_figure(tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--out", str(out), "--episodes", "2", "--sizes", "8,16", *TINY]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [r["n_m"] for r in rows] == ["8", "16"]
    assert (out / "sweep.png").exists()


def test_gradcheck_and_oracle_commands_pass(capsys):
    assert cli.main(["gradcheck"]) == 0
    assert cli.main(["oracle", "--instances", "3", "--fit-steps", "100"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert json.loads(out.strip().splitlines()[-1])["violations"] == 0
