"""CLI surface: exit codes, outputs on disk, diagnostics on stderr."""

import json

import pytest

from ranevo.cli import main


@pytest.fixture
def config_path(tmp_path):
    doc = {
        "name": "cli-small",
        "model": "ne_dqn",
        "ne_interval": 5,
        "episodes": 10,
        "seeds": [0],
        "indication_override": "low",
        "ga_overrides": {"generations": 2, "population": 4, "elitism": 1},
        "env": {"ues": 3, "episode_steps": 8, "bandwidth_hz": 2000000},
        "agent": {"trigger": {"mode": "threshold", "threshold": 1e9}},
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(doc))
    return path


def test_validate_ok(config_path, capsys):
    assert main(["validate", "--config", str(config_path)]) == 0
    out = capsys.readouterr().out
    assert "cli-small" in out and "ne_dqn" in out


def test_validate_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x"}))
    assert main(["validate", "--config", str(bad)]) == 2
    assert "model" in capsys.readouterr().err


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "nope.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_run_baseline_writes_outputs(config_path, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code = main(
        [
            "run",
            "--config",
            str(config_path),
            "--seed",
            "0",
            "--out",
            str(out_dir),
            "--baseline",
        ]
    )
    assert code == 0
    for name in ("metrics.csv", "summary.csv", "reward_curve.csv", "ga_log.csv"):
        assert (out_dir / name).is_file()
    text = capsys.readouterr().out
    assert "agent 0" in text and "jobs 0" in text


def test_run_episode_override(config_path, tmp_path):
    out_dir = tmp_path / "out"
    code = main(
        [
            "run",
            "--config",
            str(config_path),
            "--seed",
            "1",
            "--out",
            str(out_dir),
            "--baseline",
            "--episodes",
            "6",
        ]
    )
    assert code == 0
    lines = (out_dir / "metrics.csv").read_text().strip().split("\n")
    assert len(lines) - 1 == 6


def test_summarize_round_trip(config_path, tmp_path, capsys):
    out_dir = tmp_path / "out"
    main(
        ["run", "--config", str(config_path), "--seed", "0", "--out", str(out_dir), "--baseline"]
    )
    run_text = capsys.readouterr().out.splitlines()[0]
    code = main(
        ["summarize", "--in", str(out_dir), "--ne-interval", "5", "--target-return", "950"]
    )
    assert code == 0
    summ_text = capsys.readouterr().out.splitlines()[0]
    assert summ_text == run_text


def test_summarize_missing_dir(tmp_path, capsys):
    assert main(["summarize", "--in", str(tmp_path / "void")]) == 2
    assert "metrics.csv" in capsys.readouterr().err


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
