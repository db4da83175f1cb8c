"""Sequential networks and the categorical cross-entropy loss."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .layers import (GRU, LSTM, Conv1D, Dense, Flatten, GlobalMaxPool, Layer, Param, ReLU,
                     ShapeError, Softmax, Whiten)

PROB_CLIP = 1e-12


class Network:
    """An ordered stack of layers applied to inputs of shape ``(N,) + input_shape``."""

    def __init__(self, layers: Sequence[Layer], input_shape: tuple[int, ...], seed: int | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = seed
        shape = self.input_shape
        for k, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {k} ({layer.kind}): {exc}") from None
        self.output_shape = shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.layers[0].kind if self.layers else 'none'}): "
                             f"expected input {self.input_shape}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def get_weights(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(params) != len(weights):
            raise ValueError("weight list does not match the network parameters")
        for p, w in zip(params, weights):
            if p.value.shape != np.shape(w):
                raise ValueError(f"weight shape mismatch for {p.name}: {p.value.shape} vs {np.shape(w)}")
            p.value[...] = w


def build_layer(spec: dict, rng: np.random.Generator) -> Layer:
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["in_dim"], spec["units"], rng)
    if kind == "conv1d":
        return Conv1D(spec["in_channels"], spec["filters"], spec["kernel"], rng)
    if kind == "lstm":
        return LSTM(spec["in_dim"], spec["units"], rng, spec.get("return_sequences", False))
    if kind == "gru":
        return GRU(spec["in_dim"], spec["units"], rng)
    if kind == "whiten":
        return Whiten(spec["mean"], spec["matrix"])
    simple = {"relu": ReLU, "softmax": Softmax, "flatten": Flatten, "global-max-pool": GlobalMaxPool}
    if kind in simple:
        return simple[kind]()
    raise ValueError(f"unknown layer kind {kind!r}")


def build_network(specs: Sequence[dict], input_shape: tuple[int, ...], seed: int) -> Network:
    rng = np.random.default_rng(seed)
    return Network([build_layer(s, rng) for s in specs], input_shape, seed=seed)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient with respect to ``probs``.

    ``targets`` is either integer class indices or a one-hot matrix.
    The loss clips probabilities to [1e-12, 1 - 1e-12]; the gradient is that
    of the unclipped loss so saturated wrong predictions still get a signal
    through a following softmax backward.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = one_hot(targets, probs.shape[-1])
    n = probs.shape[0]
    p = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    loss = float(-(targets * np.log(p)).sum() / n)
    grad = -targets / np.maximum(probs, np.finfo(np.float64).tiny) / n
    return loss, grad
