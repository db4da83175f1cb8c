"""Class balancing: per-joint coordinate shifting of trajectories and SMOTE on flat segments."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .trajectory import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_RHO = 0.1
DEFAULT_K = 5


@dataclass
class ShiftDeltas:
    values: np.ndarray  # (34,) one delta per joint coordinate


@dataclass
class AugmentationPlan:
    targets: dict[str, int]
    method: str
    seed: int = 0
    rho: float = DEFAULT_RHO
    k: int = DEFAULT_K
    current: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ("shift", "smote"):
            raise ValueError(f"unknown augmentation method {self.method!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for c, n in self.current.items():
            if self.targets.get(c, n) < n:
                raise ValueError(f"target for {c!r} below its current count")


def balance_plan(counts: Mapping[str, int], method: str, seed: int = 0, rho: float = DEFAULT_RHO,
                 k: int = DEFAULT_K) -> AugmentationPlan:
    """Bring every class up to the majority count."""
    target = max(counts.values())
    return AugmentationPlan({c: target for c in counts}, method, seed, rho, k, dict(counts))


# ------------------------------------------------------------------ shift


def compute_shift_deltas(t: Trajectory) -> ShiftDeltas:
    """Mean absolute frame-to-frame change of every joint coordinate."""
    if len(t) < 2:
        raise ValueError("shift deltas need a trajectory with at least two frames")
    return ShiftDeltas(np.abs(np.diff(t.coords, axis=0)).mean(axis=0))


def shift_augment(t: Trajectory, deltas: ShiftDeltas, direction: int, rho: float = DEFAULT_RHO,
                  seed: int = 0) -> Trajectory:
    """Translate each coordinate by ``direction * delta * (1 + u * rho)``, u ~ U[-1, 1].

    One ``u`` is drawn per coordinate and held for the whole trajectory; the
    result is clipped to the normalized frame.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    d = np.asarray(deltas.values, dtype=np.float64)
    u = np.random.default_rng(seed).uniform(-1.0, 1.0, size=d.shape)
    offset = direction * (d + u * rho * d)
    coords = np.clip(t.coords + offset, 0.0, 1.0)
    return replace(t, coords=coords, frame_indices=t.frame_indices.copy())


def shift_balance(trajectories: Sequence[Trajectory], seed: int = 0, rho: float = DEFAULT_RHO,
                  targets: Mapping[str, int] | None = None) -> list[Trajectory]:
    """Return new shifted trajectories that bring each class up to its target count.

    Sources are cycled in input order and directions alternate +1/-1; each
    generated trajectory gets its own seed derived from ``seed``. Generated
    trajectories carry a person id suffixed with ``~aug<i>``.
    """
    by_class: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        by_class.setdefault(t.class_label, []).append(t)
    if targets is None:
        targets = balance_plan({c: len(v) for c, v in by_class.items()}, "shift", seed, rho).targets
    out = []
    for ci, label in enumerate(sorted(by_class)):
        pool = [t for t in by_class[label] if len(t) >= 2]
        need = targets.get(label, len(by_class[label])) - len(by_class[label])
        if need <= 0:
            continue
        if not pool:
            logger.warning("class %s has no trajectory with >= 2 frames; cannot shift-augment", label)
            continue
        deltas = [compute_shift_deltas(t) for t in pool]
        for i in range(need):
            src = i % len(pool)
            direction = 1 if (i // len(pool)) % 2 == 0 else -1
            sub_seed = int(np.random.default_rng([seed, ci, i]).integers(2**63 - 1))
            new = shift_augment(pool[src], deltas[src], direction, rho, sub_seed)
            new.person_id = f"{pool[src].person_id}~aug{i}"
            out.append(new)
    return out


# ------------------------------------------------------------------ SMOTE


def nearest_neighbors(x: np.ndarray, k: int, chunk: int = 2048) -> np.ndarray:
    """Indices (n, k) of each row's k nearest other rows under Euclidean distance."""
    n = len(x)
    sq = (x * x).sum(axis=1)
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        blk = x[s:s + chunk]
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * blk @ x.T
        rows = np.arange(len(blk))
        d2[rows, s + rows] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k] if k < n - 1 else np.argsort(d2, axis=1)[:, :k]
        order = np.take_along_axis(d2, part, axis=1).argsort(axis=1, kind="stable")
        out[s:s + chunk] = np.take_along_axis(part, order, axis=1)
    return out


def smote_oversample(segments_by_class: Mapping[str, np.ndarray], k: int = DEFAULT_K,
                     seed: int = 0, targets: Mapping[str, int] | None = None) -> dict[str, np.ndarray]:
    """SMOTE every class up to the majority size.

    Each synthetic vector is ``x + lam * (nn - x)`` with ``x`` a random class
    member, ``nn`` one of its ``k`` nearest same-class neighbours and
    ``lam ~ U[0, 1]``. Originals come first in each output array, unchanged.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    data = {c: np.asarray(v, dtype=np.float64).reshape(len(v), -1) for c, v in segments_by_class.items()}
    if targets is None:
        majority = max(len(v) for v in data.values())
        targets = {c: majority for c in data}
    out = {}
    for ci, label in enumerate(sorted(data)):
        x = data[label]
        need = targets[label] - len(x)
        if need <= 0:
            out[label] = x.copy()
            continue
        if len(x) < 2:
            raise ValueError(f"class {label!r} has {len(x)} sample(s); SMOTE needs at least 2")
        kk = k
        if k > len(x) - 1:
            logger.warning("class %s: k=%d clipped to %d", label, k, len(x) - 1)
            kk = len(x) - 1
        nn = nearest_neighbors(x, kk)
        rng = np.random.default_rng([seed, ci])
        base = rng.integers(0, len(x), size=need)
        pick = nn[base, rng.integers(0, kk, size=need)]
        lam = rng.uniform(0.0, 1.0, size=(need, 1))
        synth = x[base] + lam * (x[pick] - x[base])
        out[label] = np.concatenate([x, synth])
    logger.info("SMOTE counts %s", dict(Counter({c: len(v) for c, v in out.items()})))
    return out
