"""Datasets for the desk-scale trainer: synthetic shape images and IDX files.

The synthetic task is a four-way classification of 16x16 grayscale
patterns (horizontal stripes, vertical stripes, checkerboard, centered
blob), each corrupted by i.i.d. Gaussian pixel noise. Generation is fully
deterministic given the seed, with class labels balanced to within one
sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ranktune.errors import FormatError, ValidationError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

DATA_STREAM = 0xDA7A
HELDOUT_STREAM = 0x4E1D

DEFAULT_TRAIN_SIZE = 2048
DEFAULT_BATCH = 128
DEFAULT_NOISE = 0.2
IMAGE_SIZE = 16
N_CLASSES = 4


@dataclass(frozen=True)
class Dataset:
    """Channels-last images (N, H, W, 1) in float32 with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    batch_size: int = DEFAULT_BATCH

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValidationError(
                f"image/label count mismatch: {len(self.images)} images, {len(self.labels)} labels"
            )

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.size else 0


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    n_samples: int = DEFAULT_TRAIN_SIZE
    noise_sigma: float = DEFAULT_NOISE
    batch_size: int = DEFAULT_BATCH


def _class_patterns() -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    return np.stack([
        ((yy % 4) < 2).astype(np.float64),
        ((xx % 4) < 2).astype(np.float64),
        (((xx // 2 + yy // 2) % 2) == 0).astype(np.float64),
        np.exp(-((yy - 7.5) ** 2 + (xx - 7.5) ** 2) / (2 * 3.0**2)),
    ])


def make_synthetic(spec: SyntheticSpec, heldout: bool = False) -> Dataset:
    """Generate the shape-classification set; `heldout` draws a disjoint stream."""
    if spec.n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    stream = HELDOUT_STREAM if heldout else DATA_STREAM
    rng = np.random.Generator(np.random.Philox(key=[spec.seed, stream]))
    labels = np.arange(spec.n_samples) % N_CLASSES  # balanced to within one
    rng.shuffle(labels)
    images = _class_patterns()[labels] + rng.normal(0.0, spec.noise_sigma, (spec.n_samples, IMAGE_SIZE, IMAGE_SIZE))
    return Dataset(
        images=images[:, :, :, None].astype(np.float32),
        labels=labels.astype(np.int64),
        batch_size=spec.batch_size,
    )


def _read_idx_header(raw: bytes, path, expected_magic: int, n_dims: int) -> tuple[list[int], int]:
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0
        )
    dims = [struct.unpack(">I", raw[4 + 4 * i: 8 + 4 * i])[0] for i in range(n_dims)]
    return dims, header_len


def load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    dims, offset = _read_idx_header(raw, path, IDX_IMAGE_MAGIC, 3)
    count, rows, cols = dims
    expected = count * rows * cols
    if len(raw) - offset != expected:
        raise FormatError(
            f"{path}: expected {expected} pixel bytes, found {len(raw) - offset}", offset=offset
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=offset).reshape(count, rows, cols)
    return (pixels.astype(np.float32) / 255.0)[:, :, :, None]


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    dims, offset = _read_idx_header(raw, path, IDX_LABEL_MAGIC, 1)
    count = dims[0]
    if len(raw) - offset != count:
        raise FormatError(f"{path}: expected {count} label bytes, found {len(raw) - offset}", offset=offset)
    return np.frombuffer(raw, dtype=np.uint8, offset=offset).astype(np.int64)


def load_idx(images_path, labels_path, batch_size: int = DEFAULT_BATCH) -> Dataset:
    """Load an IDX image/label pair, scaling pixels to [0, 1]."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(
            f"image/label count mismatch: {len(images)} images in {images_path}, "
            f"{len(labels)} labels in {labels_path}"
        )
    return Dataset(images=images, labels=labels, batch_size=batch_size)
