import json
import os

import pytest
from click.testing import CliRunner

from cbrlab.cli import cli
from cbrlab.core.readers import read_record, read_step_metrics, read_table


def _last_line(result):
    return result.output.strip().splitlines()[-1]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def trained(runner, small_config_json, tmp_dir):
    result = runner.invoke(
        cli, ["train", "-c", small_config_json, "--seed", "0", "--steps", "100", "--dump-reservoir", "-o", tmp_dir]
    )
    assert result.exit_code == 0, result.output
    return json.loads(_last_line(result))


def test_train_writes_a_record(trained, tmp_dir):
    path = os.path.join(tmp_dir, "goal_seed0.json")
    assert trained["record"] == path
    assert trained["battery_steps"] == [0, 100]
    record = read_record(path)
    assert record.config["run"]["total_steps"] == 100
    assert record.config["run"]["seeds"] == [0]
    assert os.path.exists(os.path.join(tmp_dir, "goal_seed0.reservoir.parquet"))


def test_train_zero_steps(runner, small_config_json, tmp_dir):
    result = runner.invoke(cli, ["train", "-c", small_config_json, "--steps", "0", "-o", tmp_dir])
    assert result.exit_code == 0, result.output
    assert json.loads(_last_line(result))["battery_steps"] == [0]


def test_train_with_preset(runner, tmp_dir, monkeypatch):
    monkeypatch.setenv("CBRLAB_CFG__RESERVOIR__N_UNITS", "16")
    monkeypatch.setenv("CBRLAB_CFG__ENV__MAX_STEPS", "20")
    result = runner.invoke(cli, ["train", "-s", "obs-noise", "--steps", "0", "-o", tmp_dir])
    assert result.exit_code == 0, result.output
    record = read_record(os.path.join(tmp_dir, "obs-noise_seed0.json"))
    assert record.config["env"]["obs_noise_std"] == 0.1
    assert record.config["reservoir"]["n_units"] == 16


@pytest.mark.parametrize(
    "args",
    [
        ["train", "-c", "missing.json", "-o", "out"],
        ["train", "-s", "no-such-scenario", "-o", "out"],
        ["sweep", "-g", "no-such-grid", "-o", "out"],
        ["sweep", "-g", "g", "--values", "a,b", "-o", "out"],
        ["analyze", "-k", "no-such-kind", "-o", "out.csv", "records"],
    ],
)
def test_usage_errors(runner, args, tmp_dir):
    result = runner.invoke(cli, [a if a != "out" else tmp_dir for a in args])
    assert result.exit_code == 2


def test_config_file_must_be_json(runner, tmp_dir):
    os.makedirs(tmp_dir)
    path = os.path.join(tmp_dir, "config.yaml")
    with open(path, "w") as f:
        f.write("scenario: goal\n")
    result = runner.invoke(cli, ["train", "-c", path, "-o", tmp_dir])
    assert result.exit_code == 2


def test_analyze_curves(runner, trained, tmp_dir):
    out = os.path.join(tmp_dir, "curves.csv")
    result = runner.invoke(cli, ["analyze", tmp_dir, "-k", "curves", "-o", out])
    assert result.exit_code == 0, result.output
    curves = read_table(out)
    assert list(curves["training_step"]) == [0, 100]
    assert list(curves["std_steps"]) == [0.0, 0.0]


def test_analyze_weights_and_divergence(runner, trained, tmp_dir):
    weights = os.path.join(tmp_dir, "tables", "weights.csv")
    divergence = os.path.join(tmp_dir, "tables", "divergence.csv")
    assert runner.invoke(cli, ["analyze", trained["record"], "-k", "weights", "-o", weights]).exit_code == 0
    assert list(read_table(weights)["unit"]) == [0, 1]
    result = runner.invoke(cli, ["analyze", trained["record"], "-k", "divergence", "--g-values", "0,2.2", "-o", divergence])
    assert result.exit_code == 0, result.output
    assert list(read_table(divergence)["g"]) == [0.0, 2.2]


def test_analyze_pca(runner, trained, tmp_dir):
    out = os.path.join(tmp_dir, "tables", "pca.json")
    result = runner.invoke(cli, ["analyze", trained["record"], "-k", "pca", "-o", out])
    assert result.exit_code == 0, result.output
    with open(out) as f:
        doc = json.load(f)
    assert set(doc["header"]["explained_variance_ratio"]) == {"0"}
    assert {"seed", "episode_tag", "training_step", "step", "pc1", "pc2"} == set(doc["rows"][0])


def test_analyze_pca_needs_a_reservoir_dump(runner, small_config_json, tmp_dir):
    runner.invoke(cli, ["train", "-c", small_config_json, "--steps", "0", "-o", tmp_dir])
    result = runner.invoke(cli, ["analyze", tmp_dir, "-k", "pca", "-o", os.path.join(tmp_dir, "pca.csv")])
    assert result.exit_code == 2
    assert "dump" in result.output


def test_analyze_empty_directory(runner, tmp_dir):
    os.makedirs(tmp_dir)
    result = runner.invoke(cli, ["analyze", tmp_dir, "-k", "curves", "-o", os.path.join(tmp_dir, "c.csv")])
    assert result.exit_code == 2


def test_replay_matches_the_record(runner, trained, tmp_dir):
    out = os.path.join(tmp_dir, "replay", "battery.json")
    result = runner.invoke(cli, ["replay", trained["record"], "-o", out, "--dump-trajectories"])
    assert result.exit_code == 0, result.output
    assert json.loads(_last_line(result))["training_step"] == 100
    with open(out) as f:
        doc = json.load(f)
    assert doc["summary"]["matches_record"] is True
    assert doc["summary"]["mean_steps"] == trained["final_mean_steps"]
    assert os.path.exists(os.path.join(tmp_dir, "replay", "battery.trajectories.csv"))


def test_sweep(runner, small_config_json, tmp_dir):
    result = runner.invoke(
        cli,
        ["sweep", "-c", small_config_json, "-g", "g", "--values", "0.5,2.2", "--seeds", "0", "--steps", "0", "-o", tmp_dir],
    )
    assert result.exit_code == 0, result.output
    assert _last_line(result) == os.path.join(tmp_dir, "g.csv")
    table = read_table(os.path.join(tmp_dir, "g.csv"))
    assert list(table["reservoir.spectral_radius"]) == [0.5, 2.2]
    assert list(table["seeds"]) == [1, 1]


def test_analyze_skips_replay_outputs(runner, trained, tmp_dir):
    replay_out = os.path.join(tmp_dir, "replay", "battery")
    assert runner.invoke(cli, ["replay", trained["record"], "-o", replay_out]).exit_code == 0
    out = os.path.join(tmp_dir, "curves.csv")
    result = runner.invoke(cli, ["analyze", tmp_dir, "-k", "curves", "-o", out])
    assert result.exit_code == 0, result.output
    assert set(read_table(out)["seeds"]) == {1}


def test_train_writes_step_metrics(trained, tmp_dir):
    metrics = read_step_metrics(trained["record"])
    assert list(metrics["step"]) == list(range(1, 101))
