"""HTTP service wrapping the engine.

Endpoints execute synchronously and write the same artifacts the library
does; clients running long experiments should disable their read timeout.
The CLI drives this app in-process through an ASGI transport by default,
so the service and the command line share one request/response surface.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

import ranktune
from ranktune.errors import RankTuneError
from ranktune.harness import (
    DEFAULT_FINAL_EVAL_EPOCHS,
    RunConfig,
    compare_reports,
    execute_run,
)
from ranktune.probes import probe_snapshot_dir
from ranktune.metrics import write_probe_csv
from pathlib import Path


class RunConfigModel(BaseModel):
    mode: str
    out_dir: str
    seeds: list[int] = [1]
    hp_names: list[str] = ["lr"]
    anchors: dict[str, float] = {}
    alphas: dict[str, float] = {}
    evaluator: str = "builtin"
    optimizer: str = "adam"
    dataset: str = "synthetic_shapes"
    idx_images: str | None = None
    idx_labels: str | None = None
    snapshot_dir: str | None = None
    epochs: int = 5
    max_steps: int = 50
    plateau_tolerance: float = 0.01
    bootstrap_threshold: float = 0.9
    sweep_exponent_lo: int = -12
    sweep_exponent_hi: int = 8
    random_budget_epochs: int = 100
    random_bounds: dict[str, tuple[float, float]] = {}
    final_eval_epochs: int = DEFAULT_FINAL_EVAL_EPOCHS

    def to_run_config(self) -> RunConfig:
        return RunConfig(
            mode=self.mode,
            out_dir=self.out_dir,
            seeds=tuple(self.seeds),
            hp_names=tuple(self.hp_names),
            anchors=dict(self.anchors),
            alphas=dict(self.alphas),
            evaluator=self.evaluator,
            optimizer=self.optimizer,
            dataset=self.dataset,
            idx_images=self.idx_images,
            idx_labels=self.idx_labels,
            snapshot_dir=self.snapshot_dir,
            epochs=self.epochs,
            max_steps=self.max_steps,
            plateau_tolerance=self.plateau_tolerance,
            bootstrap_threshold=self.bootstrap_threshold,
            sweep_exponent_lo=self.sweep_exponent_lo,
            sweep_exponent_hi=self.sweep_exponent_hi,
            random_budget_epochs=self.random_budget_epochs,
            random_bounds={k: tuple(v) for k, v in self.random_bounds.items()},
            final_eval_epochs=self.final_eval_epochs,
        )


class RunRequest(BaseModel):
    config: RunConfigModel


class SeedResultModel(BaseModel):
    seed: int
    verdict: str
    selected_values: dict[str, float] | None = None
    selected_exponents: list[int] | None = None
    epoch_budget: int = 0
    rank_history: list[float] = []
    stabilized: list[float] = []
    winner_accuracy: float | None = None
    n_trials: int | None = None
    response: float | None = None
    per_epoch: list[float] | None = None
    warnings: list[str] = []


class RunResponse(BaseModel):
    mode: str
    all_converged: bool
    per_seed: list[SeedResultModel]
    artifacts: dict[str, str]
    final_eval_epochs: int
    total_wall_clock_s: float


class ProbeRequest(BaseModel):
    directory: str
    out_dir: str | None = None


class ProbeResponse(BaseModel):
    response: float = Field(description="mean zero-rank fraction over the probed epochs")
    per_epoch: list[float]
    warnings: list[str]
    csv_path: str | None = None


class CompareRequest(BaseModel):
    report_a: str
    report_b: str
    eval_epochs: int = DEFAULT_FINAL_EVAL_EPOCHS


class ComparisonRowModel(BaseModel):
    label: str
    mode: str
    selected: list[dict[str, float]]
    epoch_budget_mean: float
    epoch_budget_sd: float
    train_accuracy_mean: float
    train_accuracy_sd: float
    heldout_accuracy_mean: float
    heldout_accuracy_sd: float


class CompareResponse(BaseModel):
    eval_epochs: int
    rows: list[ComparisonRowModel]
    rendered: str


def create_app() -> FastAPI:
    app = FastAPI(title="ranktune", version=ranktune.__version__)

    @app.exception_handler(RankTuneError)
    async def _engine_error(request, exc: RankTuneError):
        raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": ranktune.__version__}

    @app.post("/runs", response_model=RunResponse)
    def run(request: RunRequest):
        try:
            report = execute_run(request.config.to_run_config())
        except RankTuneError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        payload = report.to_json_dict()
        return RunResponse(
            mode=report.mode,
            all_converged=report.all_converged,
            per_seed=[SeedResultModel(**entry) for entry in payload["per_seed"]],
            artifacts=report.artifacts,
            final_eval_epochs=report.final_eval_epochs,
            total_wall_clock_s=report.timing["total_wall_clock_s"],
        )

    @app.post("/probe", response_model=ProbeResponse)
    def probe(request: ProbeRequest):
        try:
            outcome = probe_snapshot_dir(request.directory)
        except RankTuneError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        csv_path = None
        if request.out_dir:
            out_dir = Path(request.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            csv_path = str(out_dir / "probe.csv")
            write_probe_csv(csv_path, [outcome.probe])
        return ProbeResponse(
            response=outcome.response,
            per_epoch=outcome.per_epoch,
            warnings=outcome.warnings,
            csv_path=csv_path,
        )

    @app.post("/compare", response_model=CompareResponse)
    def compare(request: CompareRequest):
        try:
            result = compare_reports(request.report_a, request.report_b, request.eval_epochs)
        except RankTuneError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        payload = result.to_json_dict()
        return CompareResponse(
            eval_epochs=result.eval_epochs,
            rows=[ComparisonRowModel(**row) for row in payload["rows"]],
            rendered=result.render(),
        )

    return app
