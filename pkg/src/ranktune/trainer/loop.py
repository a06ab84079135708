"""Training loop and finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ranktune.errors import ValidationError
from ranktune.tensors import WeightTensor4D
from ranktune.trainer.data import Dataset, SyntheticSpec, make_synthetic
from ranktune.trainer.net import MiniConvNet
from ranktune.trainer.optim import OptimizerConfig, make_optimizer

BATCH_STREAM = 0xBA7C4000
DIVERGENCE_LOSS_CAP = 1e4


@dataclass
class TrainResult:
    """Per-epoch conv-weight snapshots and training accuracies for one trial.

    On divergence the remaining epochs are aborted; `snapshots` holds only
    the epochs completed before the failure.
    """

    snapshots: list[list[WeightTensor4D]] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    diverged: bool = False
    diverged_epoch: int | None = None


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[seed, BATCH_STREAM + epoch]))
    return rng.permutation(n)


def train_epochs(
    net_seed: int,
    dataset: Dataset,
    optimizer_config: OptimizerConfig,
    epochs: int,
) -> TrainResult:
    """Run full-pass epochs, emitting deep-copied conv weights after each.

    Deterministic given (net_seed, dataset, optimizer_config), including
    batch order. Non-finite loss/parameters or loss above the cap mark the
    trial divergent and abort the remaining epochs.
    """
    if epochs < 1:
        raise ValidationError("epochs must be >= 1")
    net = MiniConvNet(net_seed, n_classes=max(dataset.n_classes, 2))
    optimizer = make_optimizer(optimizer_config, net.params)
    result = TrainResult()
    n = dataset.size
    for epoch in range(1, epochs + 1):
        perm = _epoch_permutation(net_seed, epoch, n)
        batch_accuracies = []
        for start in range(0, n, dataset.batch_size):
            idx = perm[start:start + dataset.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught below
                loss, accuracy, grads = net.loss_and_grads(dataset.images[idx], dataset.labels[idx])
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS_CAP:
                result.diverged = True
                result.diverged_epoch = epoch
                return result
            optimizer.step(net.params, grads)
            if not net.all_finite():
                result.diverged = True
                result.diverged_epoch = epoch
                return result
            batch_accuracies.append(accuracy)
        result.snapshots.append(net.conv_weights())
        result.accuracies.append(float(np.mean(batch_accuracies)))
    return result


def gradient_check(
    net_seed: int,
    batch: tuple[np.ndarray, np.ndarray] | None = None,
    n_coords: int = 200,
    h: float = 1e-5,
    param_subset: list[str] | None = None,
) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    Runs the net in 64-bit over a random subset of parameter coordinates;
    `param_subset` restricts the check to the named parameters (e.g. just
    the linear head).
    """
    if batch is None:
        data = make_synthetic(SyntheticSpec(seed=net_seed, n_samples=8))
        batch = (data.images, data.labels)
    x, y = batch
    if len(x) > 8:
        raise ValidationError("gradient check expects a batch of at most 8 samples")
    x = x.astype(np.float64)
    net = MiniConvNet(net_seed, n_classes=max(int(y.max()) + 1, 2), dtype=np.float64)
    _, _, grads = net.loss_and_grads(x, y)

    rng = np.random.Generator(np.random.Philox(key=[net_seed, 0x9C]))
    names = param_subset if param_subset is not None else net.param_names()
    sizes = np.array([net.params[k].size for k in names])
    total = int(sizes.sum())
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for coord in coords:
        pi = int(np.searchsorted(offsets, coord, side="right") - 1)
        flat_index = int(coord - offsets[pi])
        param = net.params[names[pi]]
        original = param.flat[flat_index]
        param.flat[flat_index] = original + h
        loss_plus = net.loss_and_grads(x, y)[0]
        param.flat[flat_index] = original - h
        loss_minus = net.loss_and_grads(x, y)[0]
        param.flat[flat_index] = original
        fd = (loss_plus - loss_minus) / (2 * h)
        analytic = grads[names[pi]].flat[flat_index]
        err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst
