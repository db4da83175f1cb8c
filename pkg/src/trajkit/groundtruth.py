"""Trajectory-level ground truth from reconstruction-based anomaly scores.

Scores are the mean per-segment reconstruction MSE of a trajectory. Two
labelers turn them into normal/abnormal clusters: a two-component 1-D
Gaussian mixture fitted by EM, and a score threshold chosen among candidates
by silhouette. Clusters are then reconciled with the video-level labels.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .trajectory import NORMAL

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
ABNORMAL = "abnormal"
KEEP = "keep-as-crime-class"
MOVED = "moved-to-normal"
REMOVED = "removed-outlier"
KEEP_NORMAL = "keep-as-normal"


class DegenerateInputError(ValueError):
    pass


# ------------------------------------------------------------------ scores


def perceptual_loss(original: np.ndarray, reconstruction: np.ndarray) -> float:
    original = np.asarray(original, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    if original.shape != reconstruction.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {reconstruction.shape}")
    return float(np.mean((original - reconstruction) ** 2))


@dataclass
class AnomalyScore:
    video_id: str
    person_id: str
    alpha: float


def anomaly_score(pairs: Sequence[tuple], video_id: str | None = None,
                  person_id: str | None = None) -> AnomalyScore:
    """Mean perceptual loss over one trajectory's (segment, reconstruction) pairs.

    Items may be (Segment, Reconstruction) objects or plain (raw, raw_hat) arrays.
    """
    if not pairs:
        raise ValueError("trajectory has no segments to score (shorter than one window)")
    losses = []
    for seg, rec in pairs:
        raw = getattr(seg, "raw", seg)
        raw_hat = getattr(rec, "raw_hat", rec)
        losses.append(perceptual_loss(raw, raw_hat))
        if video_id is None and hasattr(seg, "video_id"):
            video_id, person_id = seg.video_id, seg.person_id
    return AnomalyScore(video_id or "", person_id or "", math.fsum(losses) / len(losses))


# --------------------------------------------------------------------- GMM


def _log_normal(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """log N(x | mean, var) for x of shape (n,) against K components -> (n, K)."""
    d = x[:, None] - mean[None, :]
    return -0.5 * (np.log(2 * np.pi * var)[None, :] + d * d / var[None, :])


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    def _joint(self, scores: np.ndarray) -> np.ndarray:
        return np.log(self.weights)[None, :] + _log_normal(scores, self.means, self.variances)

    def responsibilities(self, scores) -> np.ndarray:
        lj = self._joint(np.asarray(scores, dtype=np.float64))
        m = lj.max(axis=1, keepdims=True)
        r = np.exp(lj - m)
        return r / r.sum(axis=1, keepdims=True)

    def score_samples(self, scores) -> np.ndarray:
        lj = self._joint(np.asarray(scores, dtype=np.float64))
        m = lj.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(lj - m).sum(axis=1, keepdims=True)))[:, 0]

    @property
    def normal_component(self) -> int:
        return int(np.argmin(self.means))


def fit_gmm(scores: Sequence[float], max_iter: int = 100, tol: float = 1e-3, seed: int = 0,
            n_components: int = 2) -> GmmModel:
    """Two-component 1-D Gaussian mixture by expectation-maximization.

    Means start at the 25th/75th percentiles with equal weights and the pooled
    variance. Iterates until the mean per-sample log-likelihood gains less
    than ``tol`` or ``max_iter`` M-steps have run; ``log_likelihood`` holds
    the trace of those per-sample means. ``seed`` only breaks exact ties
    between initial means, keeping degenerate inputs deterministic.
    """
    x = np.asarray(scores, dtype=np.float64)
    if len(np.unique(x)) < 2:
        raise DegenerateInputError("GMM needs at least two distinct score values")
    K = n_components
    means = np.percentile(x, np.linspace(25, 75, K))
    if len(np.unique(means)) < K:
        rng = np.random.default_rng(seed)
        means = np.sort(rng.choice(np.unique(x), size=K, replace=False))
    var = max(float(x.var()), VARIANCE_FLOOR)
    model = GmmModel(np.full(K, 1.0 / K), means.astype(np.float64), np.full(K, var))
    ll = float(model.score_samples(x).mean())
    model.log_likelihood.append(ll)
    for it in range(1, max_iter + 1):
        resp = model.responsibilities(x)
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, np.finfo(np.float64).tiny)
        means = (resp * x[:, None]).sum(axis=0) / nk
        d = x[:, None] - means[None, :]
        variances = np.maximum((resp * d * d).sum(axis=0) / nk, VARIANCE_FLOOR)
        weights = nk / nk.sum()
        model = GmmModel(weights, means, variances, model.log_likelihood, it)
        new_ll = float(model.score_samples(x).mean())
        model.log_likelihood.append(new_ll)
        if new_ll - ll < tol:
            model.converged = True
            break
        ll = new_ll
    return model


def assign_clusters(model: GmmModel, scores: Sequence[float]) -> list[str]:
    """Maximum-responsibility component per score; the lower-mean component is normal."""
    resp = model.responsibilities(scores)
    best = resp.argmax(axis=1)
    normal = model.normal_component
    return [NORMAL if k == normal else ABNORMAL for k in best]


# -------------------------------------------------------------- silhouette


def _sum_abs_diffs(values: np.ndarray, sorted_ref: np.ndarray, prefix: np.ndarray) -> np.ndarray:
    """Sum over r in sorted_ref of |v - r| for each v, via prefix sums."""
    k = np.searchsorted(sorted_ref, values, side="right")
    total = prefix[-1]
    left = values * k - prefix[k]
    right = (total - prefix[k]) - values * (len(sorted_ref) - k)
    return left + right


def silhouette(scores: Sequence[float], labels: Sequence) -> float:
    """Mean silhouette of a two-cluster partition of 1-D scores (absolute-difference distance).

    Points in a singleton cluster contribute 0.
    """
    x = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(x) != len(labels):
        raise ValueError("scores and labels differ in length")
    if len(x) < 2:
        raise ValueError("silhouette needs at least two points")
    ids = np.unique(labels)
    if len(ids) != 2:
        raise ValueError("silhouette needs exactly two non-empty clusters")
    s = np.zeros(len(x))
    members = [np.flatnonzero(labels == c) for c in ids]
    sorted_vals = [np.sort(x[m]) for m in members]
    prefixes = [np.concatenate([[0.0], np.cumsum(v)]) for v in sorted_vals]
    for c in range(2):
        own, other = members[c], 1 - c
        if len(own) == 1:
            continue
        vals = x[own]
        a = _sum_abs_diffs(vals, sorted_vals[c], prefixes[c]) / (len(own) - 1)
        b = _sum_abs_diffs(vals, sorted_vals[other], prefixes[other]) / len(members[other])
        denom = np.maximum(a, b)
        s[own] = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


# -------------------------------------------------------------- threshold


def candidate_grid(scores: Sequence[float], n: int = 50) -> np.ndarray:
    """Geometric grid between the 1st and 99th score percentiles (linear if the 1st is <= 0)."""
    lo, hi = np.percentile(np.asarray(scores, dtype=np.float64), [1, 99])
    if hi <= lo:
        return np.array([lo])
    if lo > 0:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


def select_threshold(scores_with_video_labels: Sequence[tuple[float, str]],
                     candidates: Iterable[float]) -> tuple[float, float]:
    """Pick the candidate whose split (<= normal, > abnormal) maximizes silhouette.

    Ties go to the smaller threshold; candidates leaving one side empty are skipped.
    """
    scores = np.asarray([s for s, _ in scores_with_video_labels], dtype=np.float64)
    best = None
    for thr in sorted(set(float(c) for c in candidates)):
        labels = scores > thr
        if labels.all() or not labels.any():
            logger.warning("threshold %.6g leaves one cluster empty; skipped", thr)
            continue
        sil = silhouette(scores, labels)
        if best is None or sil > best[1]:
            best = (thr, sil)
    if best is None:
        raise DegenerateInputError("no candidate threshold splits the scores into two groups")
    return best


def threshold_clusters(scores: Sequence[float], threshold: float) -> list[str]:
    return [NORMAL if s <= threshold else ABNORMAL for s in scores]


# --------------------------------------------------------------- relabel


@dataclass
class LabelRecord:
    video_id: str
    person_id: str
    class_label: str
    alpha: float
    cluster: str
    disposition: str


@dataclass
class TrajectoryLabeling:
    records: list[LabelRecord]
    method: str
    threshold: float | None = None

    def counts(self) -> dict[str, int]:
        out = {KEEP: 0, KEEP_NORMAL: 0, MOVED: 0, REMOVED: 0}
        for r in self.records:
            out[r.disposition] += 1
        return out

    def by_key(self) -> dict[tuple[str, str], LabelRecord]:
        return {(r.video_id, r.person_id): r for r in self.records}

    def save(self, path: str | Path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["video_id", "person_id", "class_label", "alpha", "cluster", "disposition",
                        "method", "threshold"])
            thr = "" if self.threshold is None else repr(self.threshold)
            for r in self.records:
                w.writerow([r.video_id, r.person_id, r.class_label, repr(r.alpha), r.cluster,
                            r.disposition, self.method, thr])

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryLabeling":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        if not rows:
            raise ValueError(f"{path}: empty labeling")
        records = [LabelRecord(r["video_id"], r["person_id"], r["class_label"], float(r["alpha"]),
                               r["cluster"], r["disposition"]) for r in rows]
        thr = rows[0]["threshold"]
        return cls(records, rows[0]["method"], float(thr) if thr else None)


def disposition(video_label: str, cluster: str) -> str:
    if video_label == NORMAL:
        return REMOVED if cluster == ABNORMAL else KEEP_NORMAL
    return MOVED if cluster == NORMAL else KEEP


def relabel_trajectories(trajectories: Sequence, cluster_assignments: Sequence[str], method: str,
                         scores: Sequence[float] | None = None,
                         threshold: float | None = None) -> TrajectoryLabeling:
    """Reconcile clusters with video labels.

    A crime-video trajectory clustered normal moves to the normal class; a
    normal-video trajectory clustered abnormal is dropped as an outlier;
    everything else keeps its video label. ``trajectories`` items need
    ``video_id``, ``person_id`` and ``class_label``.
    """
    if len(trajectories) != len(cluster_assignments):
        raise ValueError("cluster assignments are not aligned with trajectories")
    if method not in ("unsupervised", "supervised"):
        raise ValueError(f"unknown method {method!r}")
    if scores is None:
        scores = [getattr(t, "alpha", float("nan")) for t in trajectories]
    records = [LabelRecord(t.video_id, t.person_id, t.class_label, float(a), c, disposition(t.class_label, c))
               for t, c, a in zip(trajectories, cluster_assignments, scores)]
    labeling = TrajectoryLabeling(records, method, threshold)
    logger.info("relabel (%s): %s", method, labeling.counts())
    return labeling
