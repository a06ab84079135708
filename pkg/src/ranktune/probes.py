"""Builds rank probes from weight snapshots and wraps them as evaluators.

An evaluator maps a hyper-parameter configuration to its response value:
train (or replay) T epochs, factorize every conv layer's mode-3/4
unfoldings per epoch, record the stable ranks, and average the per-epoch
zero-rank fractions. Evaluators are pure per (configuration, seed), which
is what makes the search cache sound.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ranktune.errors import IncompleteProbeError, ValidationError
from ranktune.evbmf import evbmf
from ranktune.metrics import RankProbe, global_stable_rank, stable_rank, zero_rank_fraction
from ranktune.tensors import MODES, WeightTensor4D, unfold
from ranktune.trainer.data import Dataset
from ranktune.trainer.loop import train_epochs
from ranktune.trainer.optim import OptimizerConfig
from ranktune.trainer.snapshots import read_snapshot

DIVERGED_RESPONSE = 1.0  # divergent trials score as maximally rank-deficient

_SNAP_NAME = re.compile(r"^epoch_(\d{3})\.snap$")


@dataclass
class EvalOutcome:
    """Response value plus everything the reports need about one trial."""

    response: float
    per_epoch: list[float]
    diverged: bool = False
    accuracies: list[float] = field(default_factory=list)
    probe: RankProbe | None = None
    warnings: list[str] = field(default_factory=list)


def probe_weight_sets(
    weight_sets: Sequence[Sequence[WeightTensor4D]], config_id: str = ""
) -> RankProbe:
    """Factorize per-epoch weight sets into a complete rank probe."""
    if not weight_sets:
        raise ValidationError("need at least one epoch of weights")
    names = [w.layer_name for w in weight_sets[0]]
    probe = RankProbe(config_id=config_id, layer_names=names, epoch_count=len(weight_sets))
    for epoch, layers in enumerate(weight_sets, start=1):
        if [w.layer_name for w in layers] != names:
            raise ValidationError(f"epoch {epoch} layer names differ from epoch 1")
        for li, weight in enumerate(layers):
            for mode in MODES:
                mat = unfold(weight, mode)
                fact = evbmf(mat)
                probe.record(li, mode, epoch, stable_rank(fact, mat.rows))
    return probe


def outcome_from_probe(probe: RankProbe, **kwargs) -> EvalOutcome:
    response = global_stable_rank(probe)
    per_epoch = [zero_rank_fraction(probe, t) for t in range(1, probe.epoch_count + 1)]
    return EvalOutcome(response=response, per_epoch=per_epoch, probe=probe, **kwargs)


@dataclass
class TrainerEvaluator:
    """Trains the built-in net for T epochs per configuration.

    The dataset is built once and shared across configurations; the net
    seed is fixed per evaluator so configurations differ only in their
    hyper-parameters.
    """

    optimizer_kind: str
    dataset: Dataset
    seed: int
    epochs: int = 5

    def __call__(self, values: dict[str, float], config_id: str = "") -> EvalOutcome:
        config = OptimizerConfig(
            kind=self.optimizer_kind,
            lr=values["lr"],
            weight_decay=values.get("weight_decay", 0.0),
        )
        result = train_epochs(self.seed, self.dataset, config, self.epochs)
        if result.diverged:
            return EvalOutcome(
                response=DIVERGED_RESPONSE,
                per_epoch=[DIVERGED_RESPONSE] * self.epochs,
                diverged=True,
                accuracies=result.accuracies,
                warnings=[f"trial diverged at epoch {result.diverged_epoch}"],
            )
        probe = probe_weight_sets(result.snapshots, config_id=config_id)
        return outcome_from_probe(probe, accuracies=result.accuracies)


def find_snapshot_epochs(directory) -> list[Path]:
    """Snapshot files epoch_001.snap .. epoch_T.snap, validated gap-free."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"snapshot directory not found: {directory}")
    found = {}
    for path in directory.iterdir():
        match = _SNAP_NAME.match(path.name)
        if match:
            found[int(match.group(1))] = path
    if not found:
        raise ValidationError(f"no epoch_*.snap files in {directory}")
    top = max(found)
    missing = [t for t in range(1, top + 1) if t not in found]
    if missing:
        raise IncompleteProbeError(f"{directory}: missing snapshot for epoch {missing[0]} (of 1..{top})")
    return [found[t] for t in range(1, top + 1)]


def probe_snapshot_dir(directory, config_id: str = "") -> EvalOutcome:
    """Probe an externally produced snapshot directory."""
    paths = find_snapshot_epochs(directory)
    weight_sets = [read_snapshot(p) for p in paths]
    outcome = outcome_from_probe(
        probe_weight_sets(weight_sets, config_id=config_id or str(directory))
    )
    if outcome.response == 1.0:
        outcome.warnings.append(
            "every probed cell is rank-0 (response at its 1.0 boundary); "
            "weights may be untrained or degenerate"
        )
    return outcome


@dataclass
class SnapshotDirEvaluator:
    """Replays a fixed snapshot directory regardless of configuration."""

    directory: str

    def __call__(self, values: dict[str, float], config_id: str = "") -> EvalOutcome:
        return probe_snapshot_dir(self.directory, config_id=config_id)
