import json

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from ranktune.cli import main
from ranktune.service import create_app
from ranktune.tensors import WeightTensor4D
from ranktune.trainer import snapshot_path, write_snapshot


def structured_layers(scale=50.0):
    rng = np.random.default_rng(0)
    layers = []
    for name, shape in [("conv1", (3, 3, 6, 8)), ("conv2", (3, 3, 8, 16))]:
        u = rng.standard_normal((shape[0] * shape[1] * shape[2], 1))
        v = rng.standard_normal((1, shape[3]))
        data = (scale * (u @ v)).reshape(shape) + rng.normal(0, 1e-3, shape)
        layers.append(WeightTensor4D(name, data))
    return layers


@pytest.fixture
def snaps(tmp_path):
    d = tmp_path / "snaps"
    d.mkdir()
    for epoch in (1, 2, 3):
        write_snapshot(snapshot_path(d, epoch), structured_layers())
    return d


@pytest.fixture
def client():
    return TestClient(create_app())


def test_healthz(client):
    response = client.get("/healthz")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_probe_endpoint(client, snaps, tmp_path):
    response = client.post(
        "/probe", json={"directory": str(snaps), "out_dir": str(tmp_path / "probe_out")}
    )
    assert response.status_code == 200
    payload = response.json()
    assert payload["response"] == 0.0
    assert len(payload["per_epoch"]) == 3
    assert (tmp_path / "probe_out" / "probe.csv").exists()


def test_probe_endpoint_missing_dir_is_400(client, tmp_path):
    response = client.post("/probe", json={"directory": str(tmp_path / "missing")})
    assert response.status_code == 400
    assert "snapshot" in response.json()["detail"]


def test_runs_endpoint(client, snaps, tmp_path):
    config = {
        "mode": "autohyper",
        "out_dir": str(tmp_path / "out"),
        "evaluator": "snapshots",
        "snapshot_dir": str(snaps),
        "seeds": [1],
        "epochs": 3,
    }
    response = client.post("/runs", json={"config": config})
    assert response.status_code == 200
    payload = response.json()
    assert payload["all_converged"]
    assert payload["per_seed"][0]["verdict"] == "converged"
    assert (tmp_path / "out" / "report.json").exists()


def test_runs_endpoint_bad_config_is_400(client, tmp_path):
    response = client.post(
        "/runs", json={"config": {"mode": "bogus", "out_dir": str(tmp_path / "x")}}
    )
    assert response.status_code == 400


def test_compare_endpoint_mismatch_is_400(client, tmp_path):
    report = tmp_path / "r.json"
    report.write_text(json.dumps({
        "mode": "autohyper",
        "config_echo": {"evaluator": "snapshots", "dataset": "synthetic_shapes", "optimizer": "adam"},
        "per_seed": [],
    }))
    response = client.post(
        "/compare", json={"report_a": str(report), "report_b": str(report)}
    )
    assert response.status_code == 400


# ---------------------------------------------------------------- CLI


def write_config(tmp_path, snaps, out_name="out"):
    config = tmp_path / "run.cfg"
    config.write_text(
        "\n".join([
            "mode = autohyper",
            f"out = {tmp_path / out_name}",
            "evaluator = snapshots",
            f"snapshots.dir = {snaps}",
            "epochs = 3",
            "seeds = 1",
        ])
    )
    return config


def test_cli_run_converged_exit_zero(tmp_path, snaps):
    config = write_config(tmp_path, snaps)
    result = CliRunner().invoke(main, ["run", "--config", str(config)])
    assert result.exit_code == 0, result.output
    assert "converged" in result.output
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_run_not_converged_exit_nonzero(tmp_path):
    # All-zero weights probe at the 1.0 boundary; descent stalls in place
    # and the run ends budget_exhausted, which must surface as a nonzero exit.
    d = tmp_path / "zero_snaps"
    d.mkdir()
    for epoch in (1, 2):
        write_snapshot(snapshot_path(d, epoch), [WeightTensor4D("conv1", np.zeros((3, 3, 4, 8)))])
    config = tmp_path / "run.cfg"
    config.write_text(
        "\n".join([
            "mode = autohyper",
            f"out = {tmp_path / 'out'}",
            "evaluator = snapshots",
            f"snapshots.dir = {d}",
            "epochs = 2",
            "search.max_steps = 4",
            "seeds = 1",
        ])
    )
    result = CliRunner().invoke(main, ["run", "--config", str(config)])
    assert result.exit_code == 2
    assert "budget_exhausted" in result.output


def test_cli_run_seed_override(tmp_path, snaps):
    config = write_config(tmp_path, snaps)
    result = CliRunner().invoke(main, ["run", "--config", str(config), "--seeds", "5,6", "--quiet"])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert [entry["seed"] for entry in report["per_seed"]] == [5, 6]
    assert result.output == ""


def test_cli_probe(tmp_path, snaps):
    result = CliRunner().invoke(main, ["probe", str(snaps), "--out", str(tmp_path / "p")])
    assert result.exit_code == 0, result.output
    assert "Z = 0.0" in result.output
    assert (tmp_path / "p" / "probe.csv").exists()


def test_cli_probe_gap_fails(tmp_path, snaps):
    gap_dir = tmp_path / "gap"
    gap_dir.mkdir()
    for epoch in (1, 3):
        write_snapshot(snapshot_path(gap_dir, epoch), structured_layers())
    result = CliRunner().invoke(main, ["probe", str(gap_dir)])
    assert result.exit_code != 0
    assert "epoch 2" in result.output


def test_cli_bad_config_fails_before_running(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("mode = autohyper\n")  # missing out
    result = CliRunner().invoke(main, ["run", "--config", str(config)])
    assert result.exit_code == 1
    assert "out" in result.output
