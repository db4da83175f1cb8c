"""Two-branch GRU sequence autoencoder trained on normal segments only.

The local branch encodes box-normalized joint offsets (34 features), the
global branch the bounding box (4 features). Each branch decoder unrolls a
GRU from the encoder's final state without inputs and maps every hidden state
back to feature space; the two reconstructions are recomposed into raw
coordinates, where the loss is measured.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tinynet.checkpoint import quantize, read_checkpoint, write_checkpoint
from .tinynet.layers import GRU, Dense, Param
from .tinynet.optim import Adam
from .tinynet.training import TrainingError
from .trajectory import (N_COORDS, N_GLOBAL, NORMAL, SEGMENT_LENGTH, Segment, recompose,
                         stack_segments)

logger = logging.getLogger(__name__)

MAGIC = b"TKBB"
DEFAULT_HIDDEN = 16


@dataclass
class LatentPair:
    z_l: np.ndarray  # (12, H)
    z_g: np.ndarray  # (12, H)


@dataclass
class Reconstruction:
    raw_hat: np.ndarray  # (12, 34)
    segment_ref: tuple[str, str, int] | None = None


@dataclass
class BackboneModel:
    hidden: int = DEFAULT_HIDDEN
    seed: int = 0
    epochs: int = 0
    final_loss: float = float("nan")
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        H = self.hidden
        self.local_encoder = GRU(N_COORDS, H, rng)
        self.global_encoder = GRU(N_GLOBAL, H, rng)
        self.local_decoder = GRU(0, H, rng)
        self.global_decoder = GRU(0, H, rng)
        self.local_out = Dense(H, N_COORDS, rng)
        self.global_out = Dense(H, N_GLOBAL, rng)
        self._cache = None

    @property
    def layers(self):
        return [self.local_encoder, self.global_encoder, self.local_decoder, self.global_decoder,
                self.local_out, self.global_out]

    def parameters(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params]

    def encoder_parameters(self) -> list[Param]:
        return self.local_encoder.params + self.global_encoder.params

    def get_weights(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(weights) != len(params):
            raise ValueError("weight count does not match backbone architecture")
        for p, w in zip(params, weights):
            if p.value.shape != np.shape(w):
                raise ValueError(f"backbone weight shape mismatch: {p.value.shape} vs {np.shape(w)}")
            p.value[...] = w

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for w in self.get_weights():
            h.update(np.ascontiguousarray(w, dtype="<f4").tobytes())
        return h.hexdigest()[:16]

    def encoder_checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.encoder_parameters():
            h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
        return h.hexdigest()

    # -- batched passes -------------------------------------------------

    def encode_batch(self, local: np.ndarray, glob: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Hidden-state sequences (N, 12, H) of both encoders."""
        return self.local_encoder.forward(local), self.global_encoder.forward(glob)

    def forward(self, local: np.ndarray, glob: np.ndarray) -> np.ndarray:
        """Raw-space reconstruction (N, 12, 34); caches activations for :meth:`backward`."""
        N, T, _ = local.shape
        z_l, z_g = self.encode_batch(local, glob)
        empty = np.zeros((N, T, 0))
        d_l = self.local_decoder.forward(empty, h0=z_l[:, -1])
        d_g = self.global_decoder.forward(empty, h0=z_g[:, -1])
        local_hat = self.local_out.forward(d_l)
        glob_hat = self.global_out.forward(d_g)
        self._cache = (local_hat, glob_hat, T)
        return recompose(local_hat, glob_hat)

    def backward(self, d_raw: np.ndarray) -> None:
        local_hat, glob_hat, T = self._cache
        N = d_raw.shape[0]
        d_xy = d_raw.reshape(N, T, -1, 2)
        l_xy = local_hat.reshape(N, T, -1, 2)
        size = glob_hat[..., None, 2:4]
        d_local = (d_xy * size).reshape(local_hat.shape)
        d_glob = np.concatenate([d_xy.sum(axis=2), (d_xy * l_xy).sum(axis=2)], axis=-1)
        d_dl = self.local_out.backward(d_local)
        d_dg = self.global_out.backward(d_glob)
        self.local_decoder.backward(d_dl)
        self.global_decoder.backward(d_dg)
        dz_l = np.zeros((N, T, self.hidden))
        dz_g = np.zeros((N, T, self.hidden))
        dz_l[:, -1] = self.local_decoder.dh0
        dz_g[:, -1] = self.global_decoder.dh0
        self.local_encoder.backward(dz_l)
        self.global_encoder.backward(dz_g)

    def reconstruct_batch(self, local: np.ndarray, glob: np.ndarray, batch_size: int = 512) -> np.ndarray:
        out = [self.forward(local[s:s + batch_size], glob[s:s + batch_size])
               for s in range(0, len(local), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, SEGMENT_LENGTH, N_COORDS))

    def latents_batch(self, local: np.ndarray, glob: np.ndarray, batch_size: int = 512) -> tuple[np.ndarray, np.ndarray]:
        zl, zg = [], []
        for s in range(0, len(local), batch_size):
            a, b = self.encode_batch(local[s:s + batch_size], glob[s:s + batch_size])
            zl.append(a)
            zg.append(b)
        if not zl:
            empty = np.zeros((0, SEGMENT_LENGTH, self.hidden))
            return empty, empty.copy()
        return np.concatenate(zl), np.concatenate(zg)

    # -- persistence ----------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        desc = {"hidden": self.hidden, "local_dim": N_COORDS, "global_dim": N_GLOBAL,
                "window": SEGMENT_LENGTH, "epochs": self.epochs, "final_loss": self.final_loss,
                "seed": self.seed, "history": self.history}
        if meta:
            desc["meta"] = meta
        write_checkpoint(path, MAGIC, desc, self.get_weights())

    @classmethod
    def load(cls, path: str | Path) -> "BackboneModel":
        desc, weights = read_checkpoint(path, MAGIC)
        if desc.get("local_dim") != N_COORDS or desc.get("global_dim") != N_GLOBAL:
            raise ValueError(f"{path}: incompatible backbone dimensions")
        model = cls(hidden=desc["hidden"], seed=desc.get("seed", 0), epochs=desc.get("epochs", 0),
                    final_loss=desc.get("final_loss", float("nan")), history=desc.get("history", []))
        model.set_weights(weights)
        return model


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def train_backbone(normal_segments: Sequence[Segment], epochs: int, seed: int,
                   hidden: int = DEFAULT_HIDDEN, learning_rate: float = 5e-3,
                   batch_size: int = 32) -> BackboneModel:
    """Fit the autoencoder to minimize raw-space reconstruction MSE.

    Only segments labelled ``normal`` are accepted. The returned weights are
    rounded to float32 so the in-memory model equals its checkpoint.
    """
    if not normal_segments:
        raise ValueError("train_backbone needs at least one segment")
    bad = {s.class_label for s in normal_segments if s.class_label != NORMAL}
    if bad:
        raise ValueError(f"backbone must be trained on normal segments only; got labels {sorted(map(str, bad))}")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    raw, local, glob = stack_segments(normal_segments)
    model = BackboneModel(hidden=hidden, seed=seed)
    rng = np.random.default_rng([seed, 1])
    opt = Adam(model.parameters(), lr=learning_rate)
    history = [mse(model.reconstruct_batch(local, glob), raw)]
    n = len(raw)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            raw_hat = model.forward(local[idx], glob[idx])
            model.backward(2.0 * (raw_hat - raw[idx]) / raw_hat.size)
            opt.step()
        loss = mse(model.reconstruct_batch(local, glob), raw)
        if not np.isfinite(loss):
            raise TrainingError("backbone loss diverged", epoch)
        history.append(loss)
        logger.debug("backbone epoch %d mse %.6g", epoch, loss)
    model.set_weights(quantize(model.get_weights()))
    model.epochs = epochs
    model.final_loss = mse(model.reconstruct_batch(local, glob), raw)
    model.history = history
    if epochs and history[-1] > history[0]:
        logger.warning("backbone loss increased over training (%.4g -> %.4g)", history[0], history[-1])
    return model


def encode(model: BackboneModel, segment: Segment) -> LatentPair:
    z_l, z_g = model.encode_batch(segment.local[None], segment.global_[None])
    return LatentPair(z_l[0], z_g[0])


def reconstruct(model: BackboneModel, segment: Segment) -> Reconstruction:
    raw_hat = model.forward(segment.local[None], segment.global_[None])[0]
    return Reconstruction(raw_hat, segment.trajectory_ref)
