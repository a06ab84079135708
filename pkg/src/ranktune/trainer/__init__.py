"""Deterministic desk-scale CNN trainer producing per-epoch weight snapshots."""

from ranktune.trainer.net import MiniConvNet
from ranktune.trainer.optim import OptimizerConfig, make_optimizer, OPTIMIZER_KINDS
from ranktune.trainer.data import Dataset, SyntheticSpec, make_synthetic, load_idx
from ranktune.trainer.snapshots import write_snapshot, read_snapshot, snapshot_path
from ranktune.trainer.loop import TrainResult, train_epochs, gradient_check

__all__ = [
    "MiniConvNet",
    "OptimizerConfig",
    "make_optimizer",
    "OPTIMIZER_KINDS",
    "Dataset",
    "SyntheticSpec",
    "make_synthetic",
    "load_idx",
    "write_snapshot",
    "read_snapshot",
    "snapshot_path",
    "TrainResult",
    "train_epochs",
    "gradient_check",
]
