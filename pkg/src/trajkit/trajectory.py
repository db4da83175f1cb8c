"""Trajectory data model, CSV ingestion, segmentation and local/global decomposition.

A trajectory is one person's 17-joint 2-D pose sequence inside one video.
Coordinates are stored normalized to [0, 1] by the video resolution.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_JOINTS = 17
N_COORDS = 2 * N_JOINTS
N_GLOBAL = 4
SEGMENT_LENGTH = 12
BOX_EPS = 1e-6
MANIFEST_VERSION = "trajkit-manifest/1"

CRIME_CLASSES = (
    "Abuse",
    "Arrest",
    "Arson",
    "Assault",
    "Burglary",
    "Explosion",
    "Fighting",
    "RoadAccidents",
    "Robbery",
    "Shooting",
    "Shoplifting",
    "Stealing",
    "Vandalism",
)
NORMAL = "normal"


class TrajectoryFormatError(ValueError):
    """Raised for malformed trajectory files or manifests."""


@dataclass
class Trajectory:
    video_id: str
    person_id: str
    class_label: str
    frame_indices: np.ndarray  # (T,) int
    coords: np.ndarray  # (T, 34) normalized x1, y1, ..., x17, y17
    trajectory_label: str | None = None

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != N_COORDS:
            raise TrajectoryFormatError(
                f"expected (T, {N_COORDS}) coordinates, got {self.coords.shape}")
        if len(self.frame_indices) == 0:
            raise TrajectoryFormatError("trajectory is empty")
        if len(self.frame_indices) != len(self.coords):
            raise TrajectoryFormatError("frame index / coordinate length mismatch")
        if np.any(np.diff(self.frame_indices) <= 0):
            raise TrajectoryFormatError("frame indices must be strictly increasing")
        if not np.all(np.isfinite(self.coords)):
            raise TrajectoryFormatError("non-finite coordinate")

    @property
    def key(self) -> tuple[str, str]:
        return (self.video_id, self.person_id)

    def __len__(self) -> int:
        return len(self.frame_indices)

    def joints(self, i: int) -> np.ndarray:
        """Joint positions of the i-th stored frame as a (17, 2) array."""
        return self.coords[i].reshape(N_JOINTS, 2)


@dataclass
class Segment:
    video_id: str
    person_id: str
    start_frame: int
    raw: np.ndarray  # (12, 34)
    local: np.ndarray  # (12, 34)
    global_: np.ndarray  # (12, 4)
    class_label: str | None = None

    @property
    def trajectory_ref(self) -> tuple[str, str, int]:
        return (self.video_id, self.person_id, self.start_frame)

    @classmethod
    def from_raw(cls, video_id: str, person_id: str, start_frame: int, raw: np.ndarray,
                 class_label: str | None = None) -> "Segment":
        local, glob = decompose(raw)
        return cls(video_id, person_id, int(start_frame), np.asarray(raw, dtype=np.float64), local, glob,
                   class_label)


@dataclass
class ManifestEntry:
    path: str
    video_id: str
    person_id: str
    class_label: str
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    resolutions: dict[str, tuple[float, float]] = field(default_factory=dict)
    version: str = MANIFEST_VERSION
    root: Path | None = None

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "resolutions": {k: list(v) for k, v in sorted(self.resolutions.items())},
            "entries": [e.__dict__.copy() for e in self.entries],
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        with open(path) as fh:
            data = json.load(fh)
        if data.get("version") != MANIFEST_VERSION:
            raise TrajectoryFormatError(
                f"{path}: unsupported manifest version {data.get('version')!r}")
        entries = [ManifestEntry(**e) for e in data["entries"]]
        paths = [e.path for e in entries]
        if len(set(paths)) != len(paths):
            raise TrajectoryFormatError(f"{path}: duplicate trajectory paths")
        res = {k: (float(v[0]), float(v[1])) for k, v in data["resolutions"].items()}
        return cls(entries=entries, resolutions=res, root=path.parent.resolve())


# ---------------------------------------------------------------- file I/O


def ingest_trajectory(path: str | Path, resolution: tuple[float, float],
                      video_id: str | None = None, person_id: str | None = None,
                      class_label: str = NORMAL) -> Trajectory:
    """Read a header-less ``frame,x1,y1,...,x17,y17`` CSV of pixel coordinates.

    Coordinates are divided by ``resolution`` (width, height); rows are sorted
    by frame index. Duplicate frames are rejected.
    """
    path = Path(path)
    width, height = resolution
    scale = np.tile([float(width), float(height)], N_JOINTS)
    frames, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 1 + N_COORDS:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: expected {1 + N_COORDS} columns, got {len(parts)}")
            try:
                frame = int(parts[0])
                values = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise TrajectoryFormatError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if frame < 0:
                raise TrajectoryFormatError(f"{path}:{lineno}: negative frame index")
            frames.append(frame)
            rows.append(values)
    if not rows:
        raise TrajectoryFormatError(f"{path}: no rows")
    frames = np.asarray(frames, dtype=np.int64)
    order = np.argsort(frames, kind="stable")
    frames = frames[order]
    dup = np.flatnonzero(np.diff(frames) == 0)
    if len(dup):
        raise TrajectoryFormatError(f"{path}: duplicate frame index {frames[dup[0]]}")
    coords = np.asarray(rows, dtype=np.float64)[order] / scale
    return Trajectory(
        video_id=video_id if video_id is not None else path.stem,
        person_id=person_id if person_id is not None else "0",
        class_label=class_label,
        frame_indices=frames,
        coords=coords,
    )


def export_trajectory(t: Trajectory, path: str | Path, resolution: tuple[float, float]) -> None:
    """Write ``t`` back to pixel-space CSV, full float precision."""
    width, height = resolution
    scale = np.tile([float(width), float(height)], N_JOINTS)
    pixels = t.coords * scale
    with open(path, "w") as fh:
        for frame, row in zip(t.frame_indices, pixels):
            fh.write(str(int(frame)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_manifest_trajectories(manifest: DatasetManifest, split: str | None = None) -> list[Trajectory]:
    out = []
    for e in manifest.entries:
        if split is not None and e.split != split:
            continue
        res = manifest.resolutions.get(e.video_id)
        if res is None:
            raise TrajectoryFormatError(f"no resolution recorded for video {e.video_id!r}")
        out.append(ingest_trajectory(manifest.resolve(e), res, e.video_id, e.person_id, e.class_label))
    return out


# ------------------------------------------------------- local / global split


def decompose(segment_raw: np.ndarray, eps: float = BOX_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Split raw coordinates into box-normalized local offsets and box (cx, cy, w, h).

    Works on any leading shape ``(..., 34)``; the global part has shape ``(..., 4)``.
    """
    raw = np.asarray(segment_raw, dtype=np.float64)
    xy = raw.reshape(raw.shape[:-1] + (N_JOINTS, 2))
    lo = xy.min(axis=-2)
    hi = xy.max(axis=-2)
    center = (lo + hi) / 2.0
    size = np.maximum(hi - lo, eps)
    local = (xy - center[..., None, :]) / size[..., None, :]
    glob = np.concatenate([center, size], axis=-1)
    return local.reshape(raw.shape), glob


def recompose(local: np.ndarray, glob: np.ndarray) -> np.ndarray:
    """Inverse of :func:`decompose`: ``x = cx + w * lx``, ``y = cy + h * ly``."""
    local = np.asarray(local, dtype=np.float64)
    glob = np.asarray(glob, dtype=np.float64)
    xy = local.reshape(local.shape[:-1] + (N_JOINTS, 2))
    out = glob[..., None, 0:2] + glob[..., None, 2:4] * xy
    return out.reshape(local.shape)


# ------------------------------------------------------------ segmentation


def segment_trajectory(t: Trajectory, window: int = SEGMENT_LENGTH, stride: int = SEGMENT_LENGTH) -> list[Segment]:
    """Cut ``t`` into fixed windows; a trailing remainder shorter than ``window`` is dropped."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    n = len(t)
    if n < window:
        logger.debug("trajectory %s/%s shorter than window (%d < %d)", t.video_id, t.person_id, n, window)
        return []
    segments = []
    for start in range(0, n - window + 1, stride):
        raw = t.coords[start:start + window]
        segments.append(Segment.from_raw(t.video_id, t.person_id, int(t.frame_indices[start]), raw,
                                         t.class_label))
    return segments


def segment_all(trajectories: Iterable[Trajectory], window: int = SEGMENT_LENGTH,
                stride: int = SEGMENT_LENGTH) -> list[Segment]:
    out, short = [], 0
    for t in trajectories:
        segs = segment_trajectory(t, window, stride)
        short += not segs
        out.extend(segs)
    if short:
        logger.info("%d trajectories shorter than %d frames were skipped", short, window)
    return out


def stack_segments(segments: Sequence[Segment]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (raw, local, global) arrays of shape (N, 12, 34), (N, 12, 34), (N, 12, 4)."""
    if not segments:
        return (np.zeros((0, SEGMENT_LENGTH, N_COORDS)), np.zeros((0, SEGMENT_LENGTH, N_COORDS)),
                np.zeros((0, SEGMENT_LENGTH, N_GLOBAL)))
    return (np.stack([s.raw for s in segments]), np.stack([s.local for s in segments]),
            np.stack([s.global_ for s in segments]))


# ------------------------------------------------------------------ splits


def make_split(trajectories: Sequence[Trajectory], ratio: float = 0.8, seed: int = 0,
               paths: Sequence[str] | None = None,
               resolutions: dict[str, tuple[float, float]] | None = None) -> DatasetManifest:
    """Per-class shuffled split, ``floor(ratio * n)`` trajectories to train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    if paths is None:
        paths = [f"{t.video_id}__{t.person_id}.csv" for t in trajectories]
    by_class: dict[str, list[int]] = defaultdict(list)
    for i, t in enumerate(trajectories):
        if t.class_label is None:
            raise ValueError(f"trajectory {t.key} has no class label")
        by_class[t.class_label].append(i)
    rng = np.random.default_rng(seed)
    split = ["test"] * len(trajectories)
    for label in sorted(by_class):
        idx = np.asarray(by_class[label])
        if len(idx) == 0:
            logger.warning("class %s has no trajectories; skipped", label)
            continue
        perm = idx[rng.permutation(len(idx))]
        n_train = math.floor(ratio * len(idx))
        for i in perm[:n_train]:
            split[i] = "train"
    entries = [ManifestEntry(str(p), t.video_id, t.person_id, t.class_label, s)
               for p, t, s in zip(paths, trajectories, split)]
    return DatasetManifest(entries=entries, resolutions=dict(resolutions or {}))
