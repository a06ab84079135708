"""Command-line client for the engine service.

Commands parse local config files, then talk to the service API: by
default through an in-process ASGI transport (no server needed), or to a
remote instance via --server. Artifacts are written by the service
process, which for the in-process default is this one.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

from ranktune.errors import RankTuneError
from ranktune.harness import DEFAULT_FINAL_EVAL_EPOCHS, load_config
from ranktune.service import create_app

EXIT_NOT_CONVERGED = 2


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # In-process ASGI transport: same request/response surface as a remote
    # server, no socket. TestClient is the synchronous ASGI client that
    # ships with the service stack.
    from starlette.testclient import TestClient

    return TestClient(create_app(), base_url="http://ranktune.internal")


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


@click.group()
def main():
    """Hyper-parameter search from training-time weight statistics."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=None, help="Override the config's output directory.")
@click.option("--seeds", default=None, help="Comma-separated seed list override.")
@click.option("--quiet", is_flag=True, default=False)
@click.option("--server", default=None, help="Remote service URL; defaults to in-process.")
def run(config_path, out_dir, seeds, quiet, server):
    """Execute the experiment described by a config file."""
    try:
        config = load_config(config_path)
    except RankTuneError as exc:
        raise click.ClickException(str(exc))
    payload = {
        "mode": config.mode,
        "out_dir": out_dir or config.out_dir,
        "seeds": [int(s) for s in seeds.split(",")] if seeds else list(config.seeds),
        "hp_names": list(config.hp_names),
        "anchors": config.anchors,
        "alphas": config.alphas,
        "evaluator": config.evaluator,
        "optimizer": config.optimizer,
        "dataset": config.dataset,
        "idx_images": config.idx_images,
        "idx_labels": config.idx_labels,
        "snapshot_dir": config.snapshot_dir,
        "epochs": config.epochs,
        "max_steps": config.max_steps,
        "plateau_tolerance": config.plateau_tolerance,
        "bootstrap_threshold": config.bootstrap_threshold,
        "sweep_exponent_lo": config.sweep_exponent_lo,
        "sweep_exponent_hi": config.sweep_exponent_hi,
        "random_budget_epochs": config.random_budget_epochs,
        "random_bounds": {k: list(v) for k, v in config.random_bounds.items()},
        "final_eval_epochs": config.final_eval_epochs,
    }
    with _client(server) as client:
        result = _post(client, "/runs", {"config": payload})
    if not quiet:
        for entry in result["per_seed"]:
            selected = entry.get("selected_values")
            suffix = f" selected={selected}" if selected else ""
            if entry.get("response") is not None:
                suffix += f" Z={entry['response']:.6f}"
            click.echo(
                f"seed {entry['seed']}: {entry['verdict']}, budget {entry['epoch_budget']} epochs{suffix}"
            )
        click.echo(f"report: {result['artifacts']['report']}")
    if not result["all_converged"]:
        sys.exit(EXIT_NOT_CONVERGED)


@main.command()
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", default=None, help="Directory for probe.csv.")
@click.option("--quiet", is_flag=True, default=False)
@click.option("--server", default=None)
def probe(directory, out_dir, quiet, server):
    """Probe a directory of epoch_NNN.snap files."""
    with _client(server) as client:
        result = _post(client, "/probe", {"directory": directory, "out_dir": out_dir})
    if not quiet:
        click.echo(f"Z = {result['response']!r}")
        click.echo(f"Z_t = {result['per_epoch']!r}")
        for warning in result["warnings"]:
            click.echo(f"warning: {warning}", err=True)
        if result.get("csv_path"):
            click.echo(f"probe csv: {result['csv_path']}")


@main.command()
@click.argument("report_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("report_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--epochs", default=DEFAULT_FINAL_EVAL_EPOCHS, show_default=True)
@click.option("--out", "out_path", default=None, help="Write the comparison JSON here.")
@click.option("--server", default=None)
def compare(report_a, report_b, epochs, out_path, server):
    """Side-by-side fixed-budget evaluation of two run reports."""
    with _client(server) as client:
        result = _post(
            client, "/compare",
            {"report_a": report_a, "report_b": report_b, "eval_epochs": epochs},
        )
    click.echo(result["rendered"])
    if out_path:
        with open(out_path, "w") as fh:
            json.dump({"eval_epochs": result["eval_epochs"], "rows": result["rows"]}, fh, indent=2)
            fh.write("\n")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
