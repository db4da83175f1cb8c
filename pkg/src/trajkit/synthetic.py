"""Parametric skeleton-motion generator for desk-scale verification corpora."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .trajectory import (N_JOINTS, NORMAL, DatasetManifest, Trajectory,
                         export_trajectory, make_split)

# COCO-17 joint layout in body units (height ~1, y pointing down), centred on the hips.
POSE_TEMPLATE = np.array([
    [0.00, -0.85],  # nose
    [-0.04, -0.88], [0.04, -0.88],  # eyes
    [-0.08, -0.86], [0.08, -0.86],  # ears
    [-0.18, -0.65], [0.18, -0.65],  # shoulders
    [-0.25, -0.35], [0.25, -0.35],  # elbows
    [-0.28, -0.05], [0.28, -0.05],  # wrists
    [-0.12, 0.00], [0.12, 0.00],  # hips
    [-0.13, 0.40], [0.13, 0.40],  # knees
    [-0.14, 0.80], [0.14, 0.80],  # ankles
])
ARM_JOINTS = (7, 8, 9, 10)
LEG_JOINTS = (13, 14, 15, 16)
# +1 left (odd COCO index), -1 right: limbs swing in antiphase
_SIDE = np.array([0, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1], dtype=float)


@dataclass(frozen=True)
class MotionRegime:
    """Motion law for one class of synthetic trajectories.

    Positions are in normalized frame units. ``drift`` is added every frame,
    ``swing_*`` drives antiphase horizontal limb oscillation, ``bob_*`` a
    vertical whole-body oscillation, and ``jitter`` is i.i.d. Gaussian noise.
    """

    label: str
    drift: tuple[float, float] = (0.0, 0.0)
    swing_amplitude: float = 0.0
    swing_frequency: float = 0.0
    bob_amplitude: float = 0.0
    bob_frequency: float = 0.0
    jitter: float = 0.0
    body_height: float = 0.25
    height_spread: float = 0.0
    n_frames: int = 48


def default_regimes(n_crime: int = 3, include_normal: bool = True) -> list[MotionRegime]:
    """Well separated regimes: one slow-walking normal class plus ``n_crime`` crime classes."""
    crime = [
        MotionRegime("Fighting", drift=(0.0, 0.0), swing_amplitude=0.12, swing_frequency=0.25,
                     jitter=0.002, body_height=0.28, height_spread=0.02),
        MotionRegime("RoadAccidents", drift=(0.012, 0.004), swing_amplitude=0.07, swing_frequency=1 / 6,
                     jitter=0.001, body_height=0.22, height_spread=0.02),
        MotionRegime("Stealing", drift=(-0.004, 0.0), bob_amplitude=0.06, bob_frequency=1 / 8,
                     swing_amplitude=0.02, swing_frequency=0.5, jitter=0.004, body_height=0.16,
                     height_spread=0.02),
        MotionRegime("Robbery", drift=(0.0, -0.006), swing_amplitude=0.1, swing_frequency=1 / 10,
                     jitter=0.003, body_height=0.30, height_spread=0.02),
        MotionRegime("Arson", drift=(0.008, 0.0), bob_amplitude=0.1, bob_frequency=0.25,
                     jitter=0.002, body_height=0.20, height_spread=0.02),
    ]
    if not 1 <= n_crime <= len(crime):
        raise ValueError(f"n_crime must be in [1, {len(crime)}]")
    out = list(crime[:n_crime])
    if include_normal:
        out.insert(0, MotionRegime(NORMAL, drift=(0.003, 0.0), swing_amplitude=0.015,
                                   swing_frequency=1 / 12, jitter=0.0005, body_height=0.25,
                                   height_spread=0.02))
    return out


def _one_trajectory(regime: MotionRegime, index: int, rng: np.random.Generator) -> Trajectory:
    T = regime.n_frames
    height = regime.body_height + regime.height_spread * rng.uniform(-1.0, 1.0)
    pose = POSE_TEMPLATE * height  # (17, 2)
    f = np.arange(T, dtype=np.float64)[:, None]  # (T, 1)

    swing = np.zeros((T, N_JOINTS))
    if regime.swing_amplitude:
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = regime.swing_amplitude * np.sin(2 * np.pi * regime.swing_frequency * f + phase)
        for j in ARM_JOINTS + LEG_JOINTS:
            swing[:, j] = _SIDE[j] * wave[:, 0]
    bob = np.zeros((T, 1))
    if regime.bob_amplitude:
        phase = rng.uniform(0.0, 2 * np.pi)
        bob = regime.bob_amplitude * np.sin(2 * np.pi * regime.bob_frequency * f + phase)

    # choose a start point keeping every joint inside the frame for the whole clip
    dx, dy = regime.drift
    ext_x = np.abs(pose[:, 0]).max() + regime.swing_amplitude + 4 * regime.jitter
    ext_y = np.abs(pose[:, 1]).max() + regime.bob_amplitude + 4 * regime.jitter
    span_x = (T - 1) * dx
    span_y = (T - 1) * dy
    lo_x, hi_x = ext_x - min(span_x, 0.0), 1.0 - ext_x - max(span_x, 0.0)
    lo_y, hi_y = ext_y - min(span_y, 0.0), 1.0 - ext_y - max(span_y, 0.0)
    if lo_x > hi_x or lo_y > hi_y:
        raise ValueError(f"regime {regime.label!r} does not fit inside the frame")
    start = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])

    x = start[0] + pose[None, :, 0] + dx * f + swing
    y = start[1] + pose[None, :, 1] + dy * f + bob
    xy = np.stack([x, y], axis=-1)  # (T, 17, 2)
    if regime.jitter:
        xy = xy + rng.normal(0.0, regime.jitter, size=xy.shape)
    coords = np.clip(xy.reshape(T, 2 * N_JOINTS), 0.0, 1.0)
    return Trajectory(
        video_id=f"{regime.label}_{index:04d}",
        person_id="0",
        class_label=regime.label,
        frame_indices=np.arange(T),
        coords=coords,
    )


def generate_synthetic(regimes: Sequence[MotionRegime], n_per_class: int, seed: int) -> list[Trajectory]:
    """Generate ``n_per_class`` trajectories for each regime, deterministic under ``seed``."""
    if n_per_class <= 0:
        raise ValueError("n_per_class must be positive")
    labels = [r.label for r in regimes]
    if len(set(labels)) != len(labels):
        raise ValueError("regime labels must be unique")
    out = []
    for k, regime in enumerate(regimes):
        rng = np.random.default_rng([seed, k])
        out.extend(_one_trajectory(regime, i, rng) for i in range(n_per_class))
    return out


def write_corpus(trajectories: Sequence[Trajectory], out_dir: str | Path,
                 resolution: tuple[float, float] = (1920.0, 1080.0), ratio: float = 0.8,
                 seed: int = 0) -> DatasetManifest:
    """Export trajectories as pixel CSVs and write a split manifest next to them."""
    out_dir = Path(out_dir)
    (out_dir / "trajectories").mkdir(parents=True, exist_ok=True)
    paths = []
    for t in trajectories:
        rel = Path("trajectories") / f"{t.video_id}__{t.person_id}.csv"
        export_trajectory(t, out_dir / rel, resolution)
        paths.append(str(rel))
    manifest = make_split(trajectories, ratio=ratio, seed=seed, paths=paths,
                          resolutions={t.video_id: tuple(resolution) for t in trajectories})
    manifest.root = out_dir.resolve()
    manifest.save(out_dir / "manifest.json")
    return manifest
