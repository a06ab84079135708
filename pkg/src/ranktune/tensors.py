"""4-D convolutional weight tensors and their mode-3/4 matricizations.

A convolutional weight is stored as (N1, N2, N3, N4) = (kernel height,
kernel width, input channels, output channels). Unfolding along mode 3 or 4
rearranges it into a 2-D matrix whose rows index the chosen channel
dimension; the columns run row-major over the remaining dimensions in
ascending order. The rearrangement is a pure permutation, so it is exactly
invertible and preserves the Frobenius norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ranktune.errors import DomainError, ValidationError

MODES = (3, 4)


@dataclass(frozen=True)
class WeightTensor4D:
    """A named 4-D weight array, validated on construction."""

    layer_name: str
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise ValidationError(
                f"layer '{self.layer_name}': expected 4-D data, got {arr.ndim}-D"
            )
        if any(n < 1 for n in arr.shape):
            raise ValidationError(f"layer '{self.layer_name}': all dims must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"layer '{self.layer_name}': non-finite values in weight data")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.data.astype(np.float64)))


@dataclass(frozen=True)
class UnfoldedMatrix:
    """Mode-d matricization of a weight tensor: rows index dimension d."""

    mode: int
    data: np.ndarray

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def unfold(tensor: WeightTensor4D, mode: int) -> UnfoldedMatrix:
    """Matricize along input channels (mode 3) or output channels (mode 4).

    Row i is the row-major vectorization of the tensor slice with dimension
    `mode` fixed at i, remaining dimensions in ascending order. Analysis is
    done in 64-bit, so the data is promoted here.
    """
    if mode not in MODES:
        raise DomainError(f"unfold mode must be one of {MODES}, got {mode}")
    axis = mode - 1
    n = tensor.dims[axis]
    mat = np.moveaxis(tensor.data, axis, 0).reshape(n, -1).astype(np.float64)
    return UnfoldedMatrix(mode=mode, data=mat)


def refold(matrix: UnfoldedMatrix, dims: tuple[int, int, int, int], layer_name: str = "") -> WeightTensor4D:
    """Inverse of :func:`unfold` for the given target dims."""
    if matrix.mode not in MODES:
        raise DomainError(f"unfold mode must be one of {MODES}, got {matrix.mode}")
    axis = matrix.mode - 1
    rest = tuple(d for i, d in enumerate(dims) if i != axis)
    expected = (dims[axis], int(np.prod(rest)))
    if matrix.data.shape != expected:
        raise ValidationError(
            f"matrix shape {matrix.data.shape} inconsistent with dims {dims} and mode {matrix.mode}; "
            f"expected {expected}"
        )
    tensor = np.moveaxis(matrix.data.reshape((dims[axis],) + rest), 0, axis)
    return WeightTensor4D(layer_name=layer_name, data=tensor)
