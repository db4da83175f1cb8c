"""Mini-batch training with early stopping, plus stratified k-fold splitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Any, Sequence

import numpy as np

from .network import cross_entropy
from .optim import Adam

logger = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-6


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 3
    max_epochs: int = 25
    batch_size: int = 64
    validation_fraction: float = 0.2
    folds: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Any
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0


def take(inputs, idx):
    """Index an array or a tuple of aligned arrays along the sample axis."""
    if isinstance(inputs, tuple):
        return tuple(a[idx] for a in inputs)
    return inputs[idx]


def n_samples(inputs) -> int:
    return len(inputs[0]) if isinstance(inputs, tuple) else len(inputs)


def evaluate_loss(model, inputs, labels, batch_size: int = 256) -> float:
    n = n_samples(inputs)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        probs = model.forward(take(inputs, idx))
        loss, _ = cross_entropy(probs, labels[idx])
        total += loss * len(idx)
    return total / n


def predict_proba(model, inputs, batch_size: int = 256) -> np.ndarray:
    n = n_samples(inputs)
    out = [model.forward(take(inputs, np.arange(s, min(s + batch_size, n)))) for s in range(0, n, batch_size)]
    return np.concatenate(out, axis=0)


def holdout_split(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random train/validation index split with at least one sample on each side."""
    n = len(labels)
    if n < 2:
        raise ValueError("need at least two samples to hold out a validation set")
    perm = rng.permutation(n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(model, inputs, labels, cfg: TrainConfig, validation: tuple | None = None) -> TrainResult:
    """Train ``model`` with Adam on categorical cross-entropy.

    ``model`` needs ``forward``, ``backward`` and ``parameters``. Without an
    explicit ``validation`` pair, ``cfg.validation_fraction`` of the inputs is
    held out. Training stops once neither the training nor the validation loss
    has improved for ``cfg.patience`` consecutive epochs; the weights with the
    lowest validation loss are restored.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_samples(inputs) == 0:
        raise ValueError("no training data")
    if len(np.unique(labels)) < 2:
        raise ValueError("training data must contain at least two classes")
    rng = np.random.default_rng(cfg.seed)
    if validation is None:
        tr, va = holdout_split(labels, cfg.validation_fraction, rng)
        x_tr, y_tr = take(inputs, tr), labels[tr]
        x_va, y_va = take(inputs, va), labels[va]
    else:
        x_tr, y_tr = inputs, labels
        x_va, y_va = validation[0], np.asarray(validation[1], dtype=np.int64)

    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    best_train = best_val = math.inf
    best_weights = [p.value.copy() for p in params]
    best_epoch, stale = 0, 0
    history = []
    n = len(y_tr)
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            probs = model.forward(take(x_tr, idx))
            _, grad = cross_entropy(probs, y_tr[idx])
            model.backward(grad)
            opt.step()
        train_loss = evaluate_loss(model, x_tr, y_tr)
        val_loss = evaluate_loss(model, x_va, y_va)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError("loss became NaN/inf", epoch)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.debug("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        improved = False
        if train_loss < best_train - IMPROVEMENT_TOL:
            best_train, improved = train_loss, True
        if val_loss < best_val - IMPROVEMENT_TOL:
            best_val, improved = val_loss, True
            best_epoch = epoch
            best_weights = [p.value.copy() for p in params]
        stale = 0 if improved else stale + 1
        if stale >= cfg.patience:
            logger.info("early stopping after epoch %d (best epoch %d)", epoch, best_epoch)
            break
    for p, w in zip(params, best_weights):
        p.value[...] = w
    return TrainResult(model=model, history=history, best_epoch=best_epoch, epochs_run=epoch)


def kfold_split(n: int, k: int, labels: Sequence | None = None, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled, label-stratified k-fold split.

    Indices are shuffled within each class, classes are laid end to end and
    dealt round-robin to the folds, so fold sizes differ by at most one and
    each class is spread as evenly as its count allows.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError("need at least k samples")
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = np.zeros(n, dtype=np.int64)
    labels = np.asarray(labels)
    if len(labels) != n:
        raise ValueError("labels must have length n")
    ordered = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            logger.warning("class %s has %d < k=%d samples; not stratified", str(c), len(idx), k)
        ordered.append(idx[rng.permutation(len(idx))])
    ordered = np.concatenate(ordered)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[ordered] = np.arange(n) % k
    folds = []
    for f in range(k):
        folds.append((np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)))
    return folds
