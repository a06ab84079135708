"""Small convolutional classifier with a hand-written backward pass.

Three 3x3 valid convolutions (channels 1 -> 8 -> 16 -> 16), ReLU after
each, a 2x2 max pool after the second, global average pooling, and a
linear head. Activations are kept channels-last; convolutions run as nine
shifted-slice matmuls, which keeps memory traffic to contiguous chunks.

Weights use the (kernel-h, kernel-w, in, out) layout throughout, so the
snapshot tensors come straight from the parameter arrays.
"""

from __future__ import annotations

import numpy as np

from ranktune.tensors import WeightTensor4D

CONV_SHAPES = (
    ("conv1", (3, 3, 1, 8)),
    ("conv2", (3, 3, 8, 16)),
    ("conv3", (3, 3, 16, 16)),
)
HEAD_WIDTH = 16

NET_STREAM = 0x6E6574


def _kaiming_uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _conv_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x (B, H, W, C) channels-last, w (kh, kw, C, Cout)
    b, h, width, c = x.shape
    kh, kw, _, co = w.shape
    hp, wp = h - kh + 1, width - kw + 1
    out = None
    for i in range(kh):
        for j in range(kw):
            term = x[:, i:i + hp, j:j + wp, :].reshape(-1, c) @ w[i, j]
            out = term if out is None else out + term
    return out.reshape(b, hp, wp, co)


def _conv_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, need_dx: bool):
    b, h, width, c = x.shape
    kh, kw, _, co = w.shape
    hp, wp = h - kh + 1, width - kw + 1
    dflat = dout.reshape(-1, co)
    dw = np.empty_like(w)
    dx = np.zeros_like(x) if need_dx else None
    for i in range(kh):
        for j in range(kw):
            xs = x[:, i:i + hp, j:j + wp, :].reshape(-1, c)
            dw[i, j] = xs.T @ dflat
            if need_dx:
                dx[:, i:i + hp, j:j + wp, :] += (dflat @ w[i, j].T).reshape(b, hp, wp, c)
    return dw, dx


def _maxpool(x: np.ndarray):
    # 2x2, stride 2; ties resolve to the first quadrant in scan order.
    quads = np.stack([x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2]])
    idx = quads.argmax(axis=0)
    return np.take_along_axis(quads, idx[None], axis=0)[0], idx


def _maxpool_backward(dpool: np.ndarray, idx: np.ndarray, shape) -> np.ndarray:
    dx = np.zeros(shape, dtype=dpool.dtype)
    views = (dx[:, 0::2, 0::2], dx[:, 0::2, 1::2], dx[:, 1::2, 0::2], dx[:, 1::2, 1::2])
    for qi, view in enumerate(views):
        np.copyto(view, np.where(idx == qi, dpool, 0))
    return dx


class MiniConvNet:
    """Fixed-architecture classifier; parameters keyed by name."""

    def __init__(self, seed: int, n_classes: int = 4, dtype=np.float32):
        self.seed = seed
        self.n_classes = n_classes
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.Philox(key=[seed, NET_STREAM]))
        self.params: dict[str, np.ndarray] = {}
        for name, shape in CONV_SHAPES:
            self.params[name] = _kaiming_uniform(rng, shape, self.dtype)
        self.params["head"] = _kaiming_uniform(rng, (HEAD_WIDTH, n_classes), self.dtype)

    def param_names(self) -> list[str]:
        return list(self.params)

    def conv_weights(self) -> list[WeightTensor4D]:
        """Deep copies of the convolutional weights, in layer order."""
        return [WeightTensor4D(name, self.params[name].copy()) for name, _ in CONV_SHAPES]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params.values())

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits for a (B, H, W, 1) channels-last batch."""
        a1 = _conv_forward(x, self.params["conv1"])
        r1 = np.maximum(a1, 0)
        a2 = _conv_forward(r1, self.params["conv2"])
        r2 = np.maximum(a2, 0)
        pooled, _ = _maxpool(r2)
        a3 = _conv_forward(pooled, self.params["conv3"])
        r3 = np.maximum(a3, 0)
        gap = r3.mean(axis=(1, 2))
        return gap @ self.params["head"]

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean softmax cross-entropy, batch accuracy, and parameter gradients."""
        a1 = _conv_forward(x, self.params["conv1"])
        r1 = np.maximum(a1, 0)
        a2 = _conv_forward(r1, self.params["conv2"])
        r2 = np.maximum(a2, 0)
        pooled, pool_idx = _maxpool(r2)
        a3 = _conv_forward(pooled, self.params["conv3"])
        r3 = np.maximum(a3, 0)
        gap = r3.mean(axis=(1, 2))
        logits = gap @ self.params["head"]

        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        n = len(y)
        loss = float(-np.log(probs[np.arange(n), y] + 1e-12).mean())
        accuracy = float((logits.argmax(axis=1) == y).mean())

        dlogits = probs
        dlogits[np.arange(n), y] -= 1
        dlogits /= n
        grads = {"head": gap.T @ dlogits}
        dgap = dlogits @ self.params["head"].T
        spatial = r3.shape[1] * r3.shape[2]
        dr3 = np.broadcast_to(dgap[:, None, None, :], r3.shape) / spatial
        da3 = np.where(a3 > 0, dr3, 0).astype(x.dtype)
        grads["conv3"], dpool = _conv_backward(da3, pooled, self.params["conv3"], need_dx=True)
        dr2 = _maxpool_backward(dpool, pool_idx, r2.shape)
        da2 = np.where(a2 > 0, dr2, 0)
        grads["conv2"], dr1 = _conv_backward(da2, r1, self.params["conv2"], need_dx=True)
        da1 = np.where(a1 > 0, dr1, 0)
        grads["conv1"], _ = _conv_backward(da1, x, self.params["conv1"], need_dx=False)
        return loss, accuracy, grads
