"""First-order optimizers with coupled L2 weight decay.

Weight decay is added to the gradient before the accumulator updates, as
in the classic formulations of all three methods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ranktune.errors import ValidationError

OPTIMIZER_KINDS = ("sgd_momentum", "adam", "adagrad")

MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ADAGRAD_EPS = 1e-10


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str
    lr: float
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValidationError(f"unknown optimizer kind '{self.kind}'; expected one of {OPTIMIZER_KINDS}")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ValidationError(f"lr must be a non-negative finite number, got {self.lr}")
        if not (np.isfinite(self.weight_decay) and self.weight_decay >= 0):
            raise ValidationError(f"weight_decay must be non-negative and finite, got {self.weight_decay}")


class SgdMomentum:
    def __init__(self, config: OptimizerConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.velocity = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            g = grads[k] + self.config.weight_decay * p
            self.velocity[k] = MOMENTUM * self.velocity[k] + g
            p -= (self.config.lr * self.velocity[k]).astype(p.dtype)


class Adam:
    def __init__(self, config: OptimizerConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1 - ADAM_BETA1**self.t
        bc2 = 1 - ADAM_BETA2**self.t
        for k, p in params.items():
            g = grads[k] + self.config.weight_decay * p
            self.m[k] = ADAM_BETA1 * self.m[k] + (1 - ADAM_BETA1) * g
            self.v[k] = ADAM_BETA2 * self.v[k] + (1 - ADAM_BETA2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + ADAM_EPS)
            p -= (self.config.lr * update).astype(p.dtype)


class AdaGrad:
    def __init__(self, config: OptimizerConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.sq_sum = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            g = grads[k] + self.config.weight_decay * p
            self.sq_sum[k] += g * g
            p -= (self.config.lr * g / (np.sqrt(self.sq_sum[k]) + ADAGRAD_EPS)).astype(p.dtype)


_OPTIMIZERS = {"sgd_momentum": SgdMomentum, "adam": Adam, "adagrad": AdaGrad}


def make_optimizer(config: OptimizerConfig, params: dict[str, np.ndarray]):
    return _OPTIMIZERS[config.kind](config, params)
