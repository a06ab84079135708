"""Rank-deficiency metrics over factorized weight snapshots.

Per (layer, unfold mode, epoch) cell, the stable rank compresses a
factorization into one number in [0, 1]: the retained shrunk singular
values summed and normalized by channel count times the leading value.
Zero means the layer's low-rank part is empty (nothing learned along that
mode yet); one means a full, flat spectrum.

Only the zero/nonzero distinction feeds the response value: the per-epoch
zero fraction averages the rank-0 indicator over all layer/mode cells, and
the response value of a configuration is the mean of those fractions over
the probed epochs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ranktune.errors import IncompleteProbeError, ValidationError
from ranktune.evbmf import FactorizationResult
from ranktune.tensors import MODES

STABILIZE_POWER = 0.8


def stable_rank(fact: FactorizationResult, channel_dim: int) -> float:
    """Normalized sum of shrunk singular values; exactly 0.0 for rank 0.

    `channel_dim` is the row count of the unfolded matrix along the probed
    mode, before orientation normalization.
    """
    if channel_dim < fact.rank:
        raise ValidationError(
            f"channel_dim {channel_dim} < rank {fact.rank}: impossible geometry"
        )
    if fact.rank == 0:
        return 0.0
    d = fact.shrunk_singular_values
    return float(d.sum() / (channel_dim * d[0]))


@dataclass
class RankProbe:
    """Stable-rank values for one configuration on the (layer, mode, epoch) grid.

    Epochs are 1-based. The grid must be complete before the per-epoch or
    aggregate values are computed.
    """

    config_id: str
    layer_names: Sequence[str]
    epoch_count: int
    g_values: dict[tuple[int, int, int], float] = field(default_factory=dict)

    @property
    def layer_count(self) -> int:
        return len(self.layer_names)

    def record(self, layer: int, mode: int, epoch: int, g: float) -> None:
        if not 0 <= layer < self.layer_count:
            raise ValidationError(f"layer index {layer} out of range [0, {self.layer_count})")
        if mode not in MODES:
            raise ValidationError(f"mode must be in {MODES}, got {mode}")
        if not 1 <= epoch <= self.epoch_count:
            raise ValidationError(f"epoch {epoch} out of range [1, {self.epoch_count}]")
        if not 0.0 <= g <= 1.0:
            raise ValidationError(f"stable rank {g} outside [0, 1]")
        self.g_values[(layer, mode, epoch)] = g

    def missing_cells(self) -> list[tuple[int, int, int]]:
        return [
            (layer, mode, epoch)
            for epoch in range(1, self.epoch_count + 1)
            for layer in range(self.layer_count)
            for mode in MODES
            if (layer, mode, epoch) not in self.g_values
        ]

    def require_epoch(self, epoch: int) -> None:
        missing = [c for c in self.missing_cells() if c[2] == epoch]
        if missing:
            raise IncompleteProbeError(f"probe '{self.config_id}' missing cells at epoch {epoch}: {missing}")

    def require_complete(self) -> None:
        missing = self.missing_cells()
        if missing:
            raise IncompleteProbeError(f"probe '{self.config_id}' missing cells: {missing}")


def zero_rank_fraction(probe: RankProbe, epoch: int) -> float:
    """Fraction of (layer, mode) cells with stable rank exactly zero at one epoch."""
    probe.require_epoch(epoch)
    zeros = sum(
        1
        for layer in range(probe.layer_count)
        for mode in MODES
        if probe.g_values[(layer, mode, epoch)] == 0.0
    )
    return zeros / (len(MODES) * probe.layer_count)


def global_stable_rank(probe: RankProbe) -> float:
    """Mean zero-rank fraction over all probed epochs."""
    if probe.epoch_count < 1:
        raise ValidationError("probe must cover at least one epoch")
    probe.require_complete()
    fractions = [zero_rank_fraction(probe, t) for t in range(1, probe.epoch_count + 1)]
    return sum(fractions) / probe.epoch_count


def stabilize(values: Iterable[float]) -> list[float]:
    """Running (cumulative product)**0.8, computed in log space.

    All inputs must lie in [0, 1]; a zero forces every later entry to zero.
    """
    out: list[float] = []
    log_sum = 0.0
    hit_zero = False
    for i, v in enumerate(values):
        if not 0.0 <= v <= 1.0:
            raise ValidationError(f"stabilize input {v} at position {i} outside [0, 1]")
        if hit_zero or v == 0.0:
            hit_zero = True
            out.append(0.0)
            continue
        log_sum += math.log(v)
        out.append(math.exp(STABILIZE_POWER * log_sum))
    return out


@dataclass
class RankHistory:
    """Per-step minimum response values and their stabilized running product."""

    values: list[float] = field(default_factory=list)
    stabilized: list[float] = field(default_factory=list)

    def append(self, value: float) -> None:
        self.values.append(value)
        self.stabilized = stabilize(self.values)

    def last_change(self) -> float | None:
        """Absolute change of the stabilized sequence at its tail, if defined."""
        if len(self.stabilized) < 2:
            return None
        return abs(self.stabilized[-2] - self.stabilized[-1])


def write_probe_csv(path, probes: Iterable[RankProbe]) -> None:
    """Export probes as (config_id, layer, mode, epoch, G, Z_t, Z) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_id", "layer", "mode", "epoch", "G", "Z_t", "Z"])
        for probe in probes:
            probe.require_complete()
            z = global_stable_rank(probe)
            zt = {t: zero_rank_fraction(probe, t) for t in range(1, probe.epoch_count + 1)}
            for epoch in range(1, probe.epoch_count + 1):
                for layer in range(probe.layer_count):
                    for mode in MODES:
                        writer.writerow([
                            probe.config_id,
                            probe.layer_names[layer],
                            mode,
                            epoch,
                            repr(probe.g_values[(layer, mode, epoch)]),
                            repr(zt[epoch]),
                            repr(z),
                        ])
