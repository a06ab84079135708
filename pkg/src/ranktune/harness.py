"""Run orchestration: declarative configs, execution, reports, comparisons.

A run configuration is a flat key = value text file with dotted keys, one
experiment per file; the seed list expands internally. Reports are JSON
with all timing isolated in a separate `timing` field so that re-running
an identical configuration yields byte-identical step logs and
timing-stripped reports.

Comparison tables evaluate each report's selected configuration for a
fixed number of epochs (30 by default, stated in the table header) and
aggregate final training and held-out accuracy over seeds.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from ranktune.errors import ConfigError, ValidationError
from ranktune.metrics import write_probe_csv
from ranktune.probes import SnapshotDirEvaluator, TrainerEvaluator, probe_snapshot_dir
from ranktune.search import (
    DEFAULT_ANCHORS,
    DEFAULT_EPOCHS,
    DEFAULT_MAX_STEPS,
    DEFAULT_PLATEAU_TOLERANCE,
    DEFAULT_STEP_FACTOR,
    BOOTSTRAP_THRESHOLD,
    HpSpace,
    SearchOptions,
    SearchRun,
    autohyper,
    random_search,
    sweep,
    write_sweep_csv,
)
from ranktune.trainer import OptimizerConfig, SyntheticSpec, load_idx, make_synthetic

MODES = ("autohyper", "random_search", "sweep", "probe_snapshots")
EVALUATORS = ("builtin", "snapshots")
DATASETS = ("synthetic_shapes", "idx")

DEFAULT_RS_BOUNDS = {"lr": (1e-4, 0.1), "weight_decay": (1e-7, 0.1)}
DEFAULT_FINAL_EVAL_EPOCHS = 30

REPORT_NAME = "report.json"
STEPS_NAME = "steps.jsonl"
SWEEP_NAME = "sweep.csv"
PROBE_NAME = "probe.csv"


@dataclass
class RunConfig:
    mode: str
    out_dir: str
    seeds: tuple[int, ...] = (1,)
    hp_names: tuple[str, ...] = ("lr",)
    anchors: dict[str, float] = field(default_factory=dict)
    alphas: dict[str, float] = field(default_factory=dict)
    evaluator: str = "builtin"
    optimizer: str = "adam"
    dataset: str = "synthetic_shapes"
    idx_images: str | None = None
    idx_labels: str | None = None
    snapshot_dir: str | None = None
    epochs: int = DEFAULT_EPOCHS
    max_steps: int = DEFAULT_MAX_STEPS
    plateau_tolerance: float = DEFAULT_PLATEAU_TOLERANCE
    bootstrap_threshold: float = BOOTSTRAP_THRESHOLD
    sweep_exponent_lo: int = -12
    sweep_exponent_hi: int = 8
    random_budget_epochs: int = 100
    random_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    final_eval_epochs: int = DEFAULT_FINAL_EVAL_EPOCHS

    def __post_init__(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.evaluator not in EVALUATORS:
            problems.append(f"evaluator must be one of {EVALUATORS}, got '{self.evaluator}'")
        if not self.seeds:
            problems.append("seed list is empty")
        if self.epochs < 1:
            problems.append("epochs (T) must be >= 1")
        if self.dataset not in DATASETS:
            problems.append(f"dataset must be one of {DATASETS}, got '{self.dataset}'")
        if self.dataset == "idx" and not (self.idx_images and self.idx_labels):
            problems.append("dataset 'idx' requires builtin.idx.images and builtin.idx.labels")
        if self.evaluator == "snapshots" or self.mode == "probe_snapshots":
            if not self.snapshot_dir:
                problems.append("snapshots evaluator requires snapshots.dir")
            elif not Path(self.snapshot_dir).is_dir():
                problems.append(f"snapshot directory not found: {self.snapshot_dir}")
        if not self.hp_names:
            problems.append("hp.names is empty")
        if self.sweep_exponent_lo >= self.sweep_exponent_hi:
            problems.append("sweep.exponent_lo must be < sweep.exponent_hi")
        if problems:
            raise ConfigError("; ".join(problems))
        self.anchors = {n: float(self.anchors.get(n, DEFAULT_ANCHORS.get(n, 1e-3))) for n in self.hp_names}
        self.alphas = {n: float(self.alphas.get(n, DEFAULT_STEP_FACTOR)) for n in self.hp_names}
        if not self.random_bounds:
            self.random_bounds = {
                n: DEFAULT_RS_BOUNDS.get(n, (1e-7, 0.1)) for n in self.hp_names
            }

    def space(self) -> HpSpace:
        return HpSpace(
            names=tuple(self.hp_names),
            anchors=tuple(self.anchors[n] for n in self.hp_names),
            alphas=tuple(self.alphas[n] for n in self.hp_names),
        )

    def search_options(self) -> SearchOptions:
        return SearchOptions(
            max_steps=self.max_steps,
            plateau_tolerance=self.plateau_tolerance,
            bootstrap_threshold=self.bootstrap_threshold,
            epochs=self.epochs,
        )


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; blank lines ignored."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        entries[key] = value.strip()
    return entries


def _split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def config_from_entries(entries: dict[str, str]) -> RunConfig:
    """Build a RunConfig from parsed key/value entries."""
    entries = dict(entries)

    def take(key: str, default=None):
        return entries.pop(key, default)

    try:
        mode = take("mode", "")
        out_dir = take("out", "")
        if not out_dir:
            raise ConfigError("missing required key 'out'")
        seeds = tuple(int(s) for s in _split_list(take("seeds", "1")))
        hp_names = tuple(_split_list(take("hp.names", "lr")))
        anchors = {n: float(v) for n in hp_names if (v := take(f"hp.anchor.{n}")) is not None}
        alphas = {n: float(v) for n in hp_names if (v := take(f"hp.alpha.{n}")) is not None}
        bounds = {}
        for name in hp_names:
            raw = take(f"random.bounds.{name}")
            if raw is not None:
                parts = _split_list(raw)
                if len(parts) != 2:
                    raise ConfigError(f"random.bounds.{name} must be 'lo, hi'")
                bounds[name] = (float(parts[0]), float(parts[1]))
        config = RunConfig(
            mode=mode,
            out_dir=out_dir,
            seeds=seeds,
            hp_names=hp_names,
            anchors=anchors,
            alphas=alphas,
            evaluator=take("evaluator", "builtin"),
            optimizer=take("builtin.optimizer", "adam"),
            dataset=take("builtin.dataset", "synthetic_shapes"),
            idx_images=take("builtin.idx.images"),
            idx_labels=take("builtin.idx.labels"),
            snapshot_dir=take("snapshots.dir"),
            epochs=int(take("epochs", DEFAULT_EPOCHS)),
            max_steps=int(take("search.max_steps", DEFAULT_MAX_STEPS)),
            plateau_tolerance=float(take("search.plateau_tolerance", DEFAULT_PLATEAU_TOLERANCE)),
            bootstrap_threshold=float(take("search.bootstrap_threshold", BOOTSTRAP_THRESHOLD)),
            sweep_exponent_lo=int(take("sweep.exponent_lo", -12)),
            sweep_exponent_hi=int(take("sweep.exponent_hi", 8)),
            random_budget_epochs=int(take("random.budget_epochs", 100)),
            random_bounds=bounds,
            final_eval_epochs=int(take("final_eval.epochs", DEFAULT_FINAL_EVAL_EPOCHS)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value in configuration: {exc}") from exc
    if entries:
        raise ConfigError(f"unknown configuration keys: {sorted(entries)}")
    return config


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return config_from_entries(parse_config_text(text))


def _build_evaluator(config: RunConfig, seed: int):
    if config.evaluator == "snapshots":
        return SnapshotDirEvaluator(directory=config.snapshot_dir)
    if config.dataset == "idx":
        dataset = load_idx(config.idx_images, config.idx_labels)
    else:
        dataset = make_synthetic(SyntheticSpec(seed=seed))
    return TrainerEvaluator(
        optimizer_kind=config.optimizer,
        dataset=dataset,
        seed=seed,
        epochs=config.epochs,
    )


def _sweep_grid(config: RunConfig, space: HpSpace):
    span = range(config.sweep_exponent_lo, config.sweep_exponent_hi)
    return [space.config(exps) for exps in itertools.product(span, repeat=space.dim)]


@dataclass
class SeedResult:
    seed: int
    verdict: str
    selected_values: dict[str, float] | None = None
    selected_exponents: list[int] | None = None
    epoch_budget: int = 0
    rank_history: list[float] = field(default_factory=list)
    stabilized: list[float] = field(default_factory=list)
    winner_accuracy: float | None = None
    n_trials: int | None = None
    response: float | None = None
    per_epoch: list[float] | None = None
    warnings: list[str] = field(default_factory=list)


@dataclass
class RunReport:
    mode: str
    config_echo: dict
    final_eval_epochs: int
    per_seed: list[SeedResult]
    artifacts: dict[str, str]
    timing: dict

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "final_eval_epochs": self.final_eval_epochs,
            "config_echo": self.config_echo,
            "per_seed": [asdict(s) for s in self.per_seed],
            "artifacts": self.artifacts,
            "timing": self.timing,
        }

    @property
    def all_converged(self) -> bool:
        return all(s.verdict == "converged" for s in self.per_seed)


def _config_echo(config: RunConfig) -> dict:
    echo = asdict(config)
    echo["seeds"] = list(config.seeds)
    echo["hp_names"] = list(config.hp_names)
    echo["random_bounds"] = {k: list(v) for k, v in config.random_bounds.items()}
    return echo


def execute_run(config: RunConfig) -> RunReport:
    """Execute one configured experiment and persist its artifacts."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    space = config.space()
    per_seed: list[SeedResult] = []
    step_lines: list[str] = []
    sweep_rows_all = []
    probes = []
    seed_seconds = []
    started = time.time()

    for seed in config.seeds:
        t0 = time.monotonic()
        evaluator = _build_evaluator(config, seed)
        if config.mode == "autohyper":
            run = autohyper(space.origin(), evaluator, config.search_options())
            per_seed.append(SeedResult(
                seed=seed,
                verdict=run.verdict,
                selected_values=run.selected.values if run.selected else None,
                selected_exponents=list(run.selected.exponents) if run.selected else None,
                epoch_budget=run.epoch_budget,
                rank_history=list(run.rank_history.values),
                stabilized=list(run.rank_history.stabilized),
            ))
            for record in run.step_log:
                line = {"seed": seed, **record.to_json_dict()}
                step_lines.append(json.dumps(line))
        elif config.mode == "random_search":
            result = random_search(
                config.random_bounds, config.random_budget_epochs, evaluator, seed,
                epochs_per_trial=config.epochs,
            )
            per_seed.append(SeedResult(
                seed=seed,
                verdict="converged",
                selected_values=result.best_values,
                epoch_budget=result.epoch_budget,
                winner_accuracy=result.best_accuracy,
                n_trials=len(result.trials),
            ))
        elif config.mode == "sweep":
            run = SearchRun(space=space, options=config.search_options())
            rows = sweep(_sweep_grid(config, space), evaluator, run=run)
            sweep_rows_all.append((seed, rows))
            per_seed.append(SeedResult(seed=seed, verdict="converged", epoch_budget=run.epoch_budget))
        else:  # probe_snapshots
            outcome = probe_snapshot_dir(config.snapshot_dir)
            probes.append(outcome.probe)
            per_seed.append(SeedResult(
                seed=seed,
                verdict="converged",
                response=outcome.response,
                per_epoch=outcome.per_epoch,
                warnings=list(outcome.warnings),
            ))
        seed_seconds.append(round(time.monotonic() - t0, 3))

    artifacts = {"report": str(out_dir / REPORT_NAME)}
    if step_lines:
        (out_dir / STEPS_NAME).write_text("\n".join(step_lines) + "\n")
        artifacts["steps"] = str(out_dir / STEPS_NAME)
    if sweep_rows_all:
        for seed, rows in sweep_rows_all:
            name = SWEEP_NAME if len(sweep_rows_all) == 1 else f"sweep_seed{seed}.csv"
            write_sweep_csv(out_dir / name, rows)
            artifacts[f"sweep:{seed}"] = str(out_dir / name)
    if probes:
        write_probe_csv(out_dir / PROBE_NAME, [p for p in probes if p is not None][:1])
        artifacts["probe"] = str(out_dir / PROBE_NAME)

    report = RunReport(
        mode=config.mode,
        config_echo=_config_echo(config),
        final_eval_epochs=config.final_eval_epochs,
        per_seed=per_seed,
        artifacts=artifacts,
        timing={
            "started_unix": round(started, 3),
            "wall_clock_s_per_seed": seed_seconds,
            "total_wall_clock_s": round(sum(seed_seconds), 3),
        },
    )
    (out_dir / REPORT_NAME).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    return report


@dataclass
class ComparisonRow:
    label: str
    mode: str
    selected: list[dict[str, float]]
    epoch_budget_mean: float
    epoch_budget_sd: float
    train_accuracy_mean: float
    train_accuracy_sd: float
    heldout_accuracy_mean: float
    heldout_accuracy_sd: float


@dataclass
class ComparisonResult:
    eval_epochs: int
    rows: list[ComparisonRow]

    def to_json_dict(self) -> dict:
        return {"eval_epochs": self.eval_epochs, "rows": [asdict(r) for r in self.rows]}

    def render(self) -> str:
        header = (
            f"final evaluation: {self.eval_epochs} epochs per seed "
            "(accuracies are mean +/- sd over seeds)"
        )
        lines = [header, ""]
        lines.append(f"{'method':14s} {'budget':>14s} {'train acc':>18s} {'heldout acc':>18s}  selected")
        for row in self.rows:
            sel = "; ".join(
                ",".join(f"{k}={v:.3e}" for k, v in s.items()) for s in row.selected
            )
            lines.append(
                f"{row.label:14s} {row.epoch_budget_mean:8.1f}+/-{row.epoch_budget_sd:<5.1f} "
                f"{row.train_accuracy_mean:10.4f}+/-{row.train_accuracy_sd:<7.4f} "
                f"{row.heldout_accuracy_mean:10.4f}+/-{row.heldout_accuracy_sd:<7.4f}  {sel}"
            )
        return "\n".join(lines)


def _load_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load report {path}: {exc}") from exc


def _final_accuracy(seed: int, values: dict[str, float], optimizer: str, eval_epochs: int):
    """Train the selection for the fixed evaluation length; returns
    (final-epoch training accuracy, held-out accuracy)."""
    from ranktune.trainer.loop import _epoch_permutation
    from ranktune.trainer.net import MiniConvNet
    from ranktune.trainer.optim import make_optimizer

    dataset = make_synthetic(SyntheticSpec(seed=seed))
    heldout = make_synthetic(SyntheticSpec(seed=seed, n_samples=512), heldout=True)
    opt = OptimizerConfig(kind=optimizer, lr=values["lr"], weight_decay=values.get("weight_decay", 0.0))
    net = MiniConvNet(seed, n_classes=max(dataset.n_classes, 2))
    opt_state = make_optimizer(opt, net.params)
    n = dataset.size
    final_epoch_acc = 0.0
    for epoch in range(1, eval_epochs + 1):
        perm = _epoch_permutation(seed, epoch, n)
        batch_accs = []
        for start in range(0, n, dataset.batch_size):
            idx = perm[start:start + dataset.batch_size]
            loss, acc, grads = net.loss_and_grads(dataset.images[idx], dataset.labels[idx])
            if not np.isfinite(loss):
                return 0.0, 0.0
            opt_state.step(net.params, grads)
            batch_accs.append(acc)
        final_epoch_acc = float(np.mean(batch_accs))
    logits = net.forward(heldout.images)
    heldout_acc = float((logits.argmax(axis=1) == heldout.labels).mean())
    return final_epoch_acc, heldout_acc


def _selected_values_of(report: dict) -> list[tuple[int, dict[str, float]]]:
    out = []
    for entry in report["per_seed"]:
        values = entry.get("selected_values")
        if values:
            out.append((entry["seed"], values))
    if not out:
        raise ValidationError("report has no selected configurations to compare")
    return out


def compare_reports(path_a, path_b, eval_epochs: int = DEFAULT_FINAL_EVAL_EPOCHS) -> ComparisonResult:
    """Evaluate both reports' selections under identical fixed-epoch training."""
    reports = [_load_report(path_a), _load_report(path_b)]
    echoes = [r.get("config_echo", {}) for r in reports]
    for echo, path in zip(echoes, (path_a, path_b)):
        if echo.get("evaluator") != "builtin" or echo.get("dataset") != "synthetic_shapes":
            raise ValidationError(
                f"{path}: comparison requires builtin trainer reports on synthetic_shapes"
            )
    if echoes[0].get("optimizer") != echoes[1].get("optimizer"):
        raise ValidationError(
            f"optimizer mismatch: {echoes[0].get('optimizer')} vs {echoes[1].get('optimizer')}"
        )
    rows = []
    for report, echo, path in zip(reports, echoes, (path_a, path_b)):
        selected = _selected_values_of(report)
        train_accs, heldout_accs = [], []
        for seed, values in selected:
            train_acc, heldout_acc = _final_accuracy(seed, values, echo["optimizer"], eval_epochs)
            train_accs.append(train_acc)
            heldout_accs.append(heldout_acc)
        budgets = [entry["epoch_budget"] for entry in report["per_seed"]]
        rows.append(ComparisonRow(
            label=Path(path).parent.name or report["mode"],
            mode=report["mode"],
            selected=[v for _, v in selected],
            epoch_budget_mean=float(np.mean(budgets)),
            epoch_budget_sd=float(np.std(budgets)),
            train_accuracy_mean=float(np.mean(train_accs)),
            train_accuracy_sd=float(np.std(train_accs)),
            heldout_accuracy_mean=float(np.mean(heldout_accs)),
            heldout_accuracy_sd=float(np.std(heldout_accs)),
        ))
    return ComparisonResult(eval_epochs=eval_epochs, rows=rows)
