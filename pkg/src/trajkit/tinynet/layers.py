"""Layers with explicit forward/backward passes.

Every layer keeps the activations of its last ``forward`` call and uses them
in ``backward``; parameters live in :class:`Param` objects so that optimizers
and gradient checkers can treat all layers uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

RECURRENT_INIT = 0.08


class ShapeError(ValueError):
    pass


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: list[Param] = []
        self._cache = None

    def spec(self) -> dict:
        return {"kind": self.kind}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, units: int, rng: np.random.Generator):
        super().__init__()
        if in_dim < 1 or units < 1:
            raise ShapeError("dense dims must be positive")
        self.in_dim, self.units = in_dim, units
        self.W = Param("W", glorot(rng, (in_dim, units), in_dim, units))
        self.b = Param("b", np.zeros(units))
        self.params = [self.W, self.b]

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "units": self.units}

    def output_shape(self, in_shape):
        if in_shape[-1] != self.in_dim:
            raise ShapeError(f"dense expects last dim {self.in_dim}, got {in_shape}")
        return in_shape[:-1] + (self.units,)

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"dense layer expects last dim {self.in_dim}, got {x.shape}")
        self._cache = x
        return x @ self.W.value + self.b.value

    def backward(self, dout):
        x = self._cache
        x2 = x.reshape(-1, self.in_dim)
        d2 = dout.reshape(-1, self.units)
        self.W.grad += x2.T @ d2
        self.b.grad += d2.sum(axis=0)
        return dout @ self.W.value.T


class Conv1D(Layer):
    """Valid-padding 1-D convolution over inputs of shape (N, T, C)."""

    kind = "conv1d"

    def __init__(self, in_channels: int, filters: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        if min(in_channels, filters, kernel) < 1:
            raise ShapeError("conv1d dims must be positive")
        self.in_channels, self.filters, self.kernel = in_channels, filters, kernel
        fan_in, fan_out = kernel * in_channels, kernel * filters
        self.W = Param("W", glorot(rng, (kernel, in_channels, filters), fan_in, fan_out))
        self.b = Param("b", np.zeros(filters))
        self.params = [self.W, self.b]

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "filters": self.filters,
                "kernel": self.kernel}

    def output_shape(self, in_shape):
        T, C = in_shape[-2:]
        if C != self.in_channels:
            raise ShapeError(f"conv1d expects {self.in_channels} channels, got {in_shape}")
        if self.kernel > T:
            raise ShapeError(f"conv1d kernel {self.kernel} longer than input length {T}")
        return in_shape[:-2] + (T - self.kernel + 1, self.filters)

    def forward(self, x):
        self.output_shape(x.shape[1:])
        # (N, T', C, K) -> (N, T', K, C) so the flattened patch matches W's (K, C) order
        cols = sliding_window_view(x, self.kernel, axis=1).transpose(0, 1, 3, 2)
        N, Tp = cols.shape[:2]
        cols = cols.reshape(N, Tp, self.kernel * self.in_channels)
        self._cache = (x.shape, cols)
        W2 = self.W.value.reshape(-1, self.filters)
        return cols @ W2 + self.b.value

    def backward(self, dout):
        x_shape, cols = self._cache
        N, Tp, F = dout.shape
        d2 = dout.reshape(-1, F)
        self.W.grad += (cols.reshape(-1, cols.shape[-1]).T @ d2).reshape(self.W.value.shape)
        self.b.grad += d2.sum(axis=0)
        dcols = (dout @ self.W.value.reshape(-1, F).T).reshape(N, Tp, self.kernel, self.in_channels)
        dx = np.zeros(x_shape)
        for k in range(self.kernel):
            dx[:, k:k + Tp, :] += dcols[:, :, k, :]
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._cache, dout, 0.0)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        self._cache = p
        return p

    def backward(self, dout):
        p = self._cache
        return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


class Whiten(Layer):
    """Fixed affine map ``(x - mean) @ matrix`` over the last axis; not trained."""

    kind = "whiten"

    def __init__(self, mean, matrix):
        super().__init__()
        self.mean = np.asarray(mean, dtype=np.float64)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.mean.ndim != 1 or self.matrix.shape != (len(self.mean), len(self.mean)):
            raise ShapeError("whiten needs a (D,) mean and a (D, D) matrix")

    def spec(self):
        return {"kind": self.kind, "mean": self.mean.tolist(), "matrix": self.matrix.tolist()}

    def output_shape(self, in_shape):
        if in_shape[-1] != len(self.mean):
            raise ShapeError(f"whiten expects last dim {len(self.mean)}, got {in_shape}")
        return in_shape

    def forward(self, x):
        return (x - self.mean) @ self.matrix

    def backward(self, dout):
        return dout @ self.matrix.T


class GlobalMaxPool(Layer):
    """Max over the time axis of (N, T, F); gradient goes to the first maximum."""

    kind = "global-max-pool"

    def output_shape(self, in_shape):
        return in_shape[:-2] + (in_shape[-1],)

    def forward(self, x):
        idx = x.argmax(axis=1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]

    def backward(self, dout):
        shape, idx = self._cache
        dx = np.zeros(shape)
        np.put_along_axis(dx, idx[:, None, :], dout[:, None, :], axis=1)
        return dx


class LSTM(Layer):
    """LSTM over (N, T, D); returns the last hidden state or the full sequence.

    Gate order in the packed weights is input, forget, cell, output.
    """

    kind = "lstm"

    def __init__(self, in_dim: int, units: int, rng: np.random.Generator, return_sequences: bool = False):
        super().__init__()
        self.in_dim, self.units, self.return_sequences = in_dim, units, return_sequences
        H = units
        self.W = Param("W", rng.uniform(-RECURRENT_INIT, RECURRENT_INIT, (in_dim, 4 * H)))
        self.U = Param("U", rng.uniform(-RECURRENT_INIT, RECURRENT_INIT, (H, 4 * H)))
        self.b = Param("b", np.zeros(4 * H))
        self.params = [self.W, self.U, self.b]

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "units": self.units,
                "return_sequences": self.return_sequences}

    def output_shape(self, in_shape):
        T, D = in_shape[-2:]
        if D != self.in_dim:
            raise ShapeError(f"lstm expects input dim {self.in_dim}, got {in_shape}")
        return (T, self.units) if self.return_sequences else (self.units,)

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.in_dim:
            raise ShapeError(f"lstm expects (N, T, {self.in_dim}), got {x.shape}")
        N, T, _ = x.shape
        H = self.units
        xw = x @ self.W.value + self.b.value  # (N, T, 4H)
        h = np.zeros((N, H))
        c = np.zeros((N, H))
        hs = np.zeros((N, T + 1, H))
        cs = np.zeros((N, T + 1, H))
        gates = np.zeros((N, T, 4 * H))
        U = self.U.value
        for t in range(T):
            a = xw[:, t] + h @ U
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = sigmoid(a[:, 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            gates[:, t] = np.concatenate([i, f, g, o], axis=1)
            hs[:, t + 1] = h
            cs[:, t + 1] = c
        self._cache = (x, hs, cs, gates)
        return hs[:, 1:].copy() if self.return_sequences else h.copy()

    def backward(self, dout):
        x, hs, cs, gates = self._cache
        N, T, D = x.shape
        H = self.units
        U = self.U.value
        if self.return_sequences:
            dh_seq = dout
        else:
            dh_seq = np.zeros((N, T, H))
            dh_seq[:, -1] = dout
        da_all = np.zeros((N, T, 4 * H))
        dh_next = np.zeros((N, H))
        dc_next = np.zeros((N, H))
        for t in reversed(range(T)):
            i, f, g, o = (gates[:, t, k * H:(k + 1) * H] for k in range(4))
            c, c_prev = cs[:, t + 1], cs[:, t]
            tc = np.tanh(c)
            dh = dh_seq[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc ** 2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
            da_all[:, t] = da
            dh_next = da @ U.T
        self.W.grad += x.reshape(N * T, D).T @ da_all.reshape(N * T, 4 * H)
        self.U.grad += hs[:, :-1].reshape(-1, H).T @ da_all.reshape(-1, 4 * H)
        self.b.grad += da_all.sum(axis=(0, 1))
        return da_all @ self.W.value.T


class GRU(Layer):
    """Gated recurrent unit returning the full hidden sequence (N, T, H).

    An optional initial state can be passed to ``forward``; its gradient is
    available as ``dh0`` after ``backward``. ``in_dim`` may be 0 for an
    input-free decoder that only unrolls its state.
    """

    kind = "gru"

    def __init__(self, in_dim: int, units: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.units = in_dim, units
        H = units
        self.W = Param("W", rng.uniform(-RECURRENT_INIT, RECURRENT_INIT, (in_dim, 3 * H)))
        self.U = Param("U", rng.uniform(-RECURRENT_INIT, RECURRENT_INIT, (H, 3 * H)))
        self.b = Param("b", np.zeros(3 * H))
        self.params = [self.W, self.U, self.b]
        self.dh0 = None

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "units": self.units}

    def output_shape(self, in_shape):
        if in_shape[-1] != self.in_dim:
            raise ShapeError(f"gru expects input dim {self.in_dim}, got {in_shape}")
        return in_shape[:-1] + (self.units,)

    def forward(self, x, h0=None):
        N, T, D = x.shape
        if D != self.in_dim:
            raise ShapeError(f"gru expects input dim {self.in_dim}, got {x.shape}")
        H = self.units
        xw = x @ self.W.value + self.b.value  # (N, T, 3H)
        U = self.U.value
        h = np.zeros((N, H)) if h0 is None else np.asarray(h0, dtype=np.float64)
        hs = np.zeros((N, T + 1, H))
        hs[:, 0] = h
        zs = np.zeros((N, T, H))
        rs = np.zeros((N, T, H))
        ns = np.zeros((N, T, H))
        for t in range(T):
            a_zr = xw[:, t, :2 * H] + h @ U[:, :2 * H]
            z = sigmoid(a_zr[:, :H])
            r = sigmoid(a_zr[:, H:])
            n = np.tanh(xw[:, t, 2 * H:] + (r * h) @ U[:, 2 * H:])
            h = (1.0 - z) * n + z * h
            zs[:, t], rs[:, t], ns[:, t] = z, r, n
            hs[:, t + 1] = h
        self._cache = (x, hs, zs, rs, ns)
        return hs[:, 1:].copy()

    def backward(self, dout):
        x, hs, zs, rs, ns = self._cache
        N, T, D = x.shape
        H = self.units
        U = self.U.value
        Uzr, Un = U[:, :2 * H], U[:, 2 * H:]
        da_all = np.zeros((N, T, 3 * H))
        dUn = np.zeros((H, H))
        dh_next = np.zeros((N, H))
        for t in reversed(range(T)):
            z, r, n, h_prev = zs[:, t], rs[:, t], ns[:, t], hs[:, t]
            dh = dout[:, t] + dh_next
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dan = dn * (1.0 - n ** 2)
            drh = dan @ Un.T
            dr = drh * h_prev
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            dazr = np.concatenate([daz, dar], axis=1)
            dUn += (r * h_prev).T @ dan
            dh_next = dh * z + drh * r + dazr @ Uzr.T
            da_all[:, t] = np.concatenate([dazr, dan], axis=1)
        h_prev_all = hs[:, :-1].reshape(-1, H)
        self.U.grad[:, :2 * H] += h_prev_all.T @ da_all[:, :, :2 * H].reshape(-1, 2 * H)
        self.U.grad[:, 2 * H:] += dUn
        self.W.grad += x.reshape(N * T, D).T @ da_all.reshape(N * T, 3 * H)
        self.b.grad += da_all.sum(axis=(0, 1))
        self.dh0 = dh_next
        return da_all @ self.W.value.T


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv1D, ReLU, Softmax, Flatten, GlobalMaxPool, LSTM, GRU,
                                          Whiten)}
