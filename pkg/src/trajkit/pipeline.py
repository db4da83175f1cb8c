"""Experiment configuration and the staged end-to-end pipeline.

Stages run in order (ingest, split, train-backbone, score, make-labels,
augment, train-clf, evaluate, compare). Each stage is keyed by a content hash
of its parameters and upstream artifacts; when the key and the recorded
artifact hashes still match, the stage is skipped. Downstream stages always
read artifacts back from disk, so a fresh run and a cached rerun see the same
bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .backbone import BackboneModel, train_backbone
from .classifiers import (VARIANTS, ClassifierModel, Prediction, class_list, predict, select_trajectories,
                          train_decoded, train_encoded)
from .evaluation.metrics import ConfusionMatrix, MetricsReport, confusion, metrics
from .evaluation.report import comparison_summary, confusion_svg, metrics_table_csv, metrics_table_text
from .evaluation.stats import ComparisonResult, DegenerateStatsError, compare_models
from .groundtruth import (KEEP, KEEP_NORMAL, MOVED, REMOVED, TrajectoryLabeling, assign_clusters,
                          anomaly_score, candidate_grid, fit_gmm, relabel_trajectories, select_threshold,
                          silhouette, threshold_clusters)
from .tinynet.training import TrainConfig, kfold_split
from .trajectory import (NORMAL, DatasetManifest, Trajectory, load_manifest_trajectories, make_split,
                         segment_all, segment_trajectory, stack_segments)

logger = logging.getLogger(__name__)

TOOLKIT = f"trajkit {__version__}"
METHOD_ALIASES = {"gmm": "unsupervised", "unsupervised": "unsupervised",
                  "threshold": "supervised", "supervised": "supervised"}


class ValidationError(ValueError):
    """Bad configuration or input detected before any work is done."""


class StageError(RuntimeError):
    def __init__(self, stage: str, path: Path, cause: BaseException):
        super().__init__(f"stage {stage!r} failed ({path}): {cause}")
        self.stage = stage
        self.path = path
        self.cause = cause


# ------------------------------------------------------------------ config


@dataclass
class BackboneConfig:
    hidden: int = 16
    epochs: int = 60
    learning_rate: float = 5e-3
    batch_size: int = 32


@dataclass
class GroundTruthConfig:
    method: str = "unsupervised"
    candidates: int = 50
    max_iter: int = 100
    tol: float = 1e-3


@dataclass
class AugmentConfig:
    encoded: str = "shift"
    decoded: str = "smote"
    rho: float = 0.1
    k: int = 5


@dataclass
class GridCell:
    variant: str
    arch: str = "A3"
    fusion: str | None = "early-agg"

    @property
    def name(self) -> str:
        if self.variant == "decoded":
            return "decoded_LSTM"
        return f"{self.variant}_{self.arch}_{self.fusion}"


@dataclass
class EvalConfig:
    topk: list[int] = field(default_factory=lambda: [3, 5])
    alpha: float = 0.05


def default_grid() -> list[GridCell]:
    return [GridCell("MPED-C", "A3", "early-agg"), GridCell("decoded", "LSTM", None)]


@dataclass
class ExperimentConfig:
    data_dir: str
    out_dir: str
    seed: int = 0
    split_ratio: float = 0.8
    resplit: bool = False
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    groundtruth: GroundTruthConfig = field(default_factory=GroundTruthConfig)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    grid: list[GridCell] = field(default_factory=default_grid)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    width: int = 64
    filters: int = 64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        try:
            for key, sub in (("backbone", BackboneConfig), ("groundtruth", GroundTruthConfig),
                             ("augmentation", AugmentConfig), ("train", TrainConfig),
                             ("evaluation", EvalConfig)):
                if key in d:
                    d[key] = sub(**d[key])
            if "grid" in d:
                d["grid"] = [GridCell(**c) for c in d["grid"]]
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def config_hash(self) -> str:
        """Hash of everything except the data and output locations."""
        d = self.to_dict()
        d.pop("data_dir")
        d.pop("out_dir")
        return _hash_obj(d)[:12]

    def validate(self) -> None:
        data = Path(self.data_dir)
        if not data.is_dir():
            raise ValidationError(f"data dir {data} does not exist")
        if not (data / "manifest.json").is_file():
            raise ValidationError(f"no manifest.json in {data}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError("split_ratio must lie in (0, 1)")
        if self.groundtruth.method not in METHOD_ALIASES:
            raise ValidationError(f"unknown ground-truth method {self.groundtruth.method!r}")
        if not self.grid:
            raise ValidationError("classifier grid is empty")
        names = [c.name for c in self.grid]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate classifier grid cells")
        for c in self.grid:
            if c.variant not in VARIANTS:
                raise ValidationError(f"unknown variant {c.variant!r}")
            if c.variant != "decoded" and c.fusion not in ("late", "early-agg", "early-cat"):
                raise ValidationError(f"{c.name}: unknown fusion {c.fusion!r}")
            if c.variant != "decoded" and c.fusion != "late" and c.arch.upper() != "A3":
                raise ValidationError(f"{c.name}: early fusion requires A3")
        if self.train.folds < 2:
            raise ValidationError("k-fold training needs folds >= 2")
        if self.augmentation.encoded not in ("shift", "none") or self.augmentation.decoded not in ("smote", "none"):
            raise ValidationError("augmentation: encoded in {shift, none}, decoded in {smote, none}")


# ----------------------------------------------------------------- helpers


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def header_line(config_hash: str) -> str:
    return f"{TOOLKIT} config={config_hash}"


def cell_seed(seed: int, name: str, fold: int) -> int:
    return int(np.random.default_rng([seed, zlib.crc32(name.encode()), fold]).integers(2**31 - 1))


def write_scores(path: Path, rows: Sequence[tuple], header: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "person_id", "class_label", "split", "alpha"])
        for vid, pid, label, split, alpha in rows:
            w.writerow([vid, pid, label, split, repr(float(alpha))])


def read_scores(path: str | Path) -> list[tuple[str, str, str, str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return [(r["video_id"], r["person_id"], r["class_label"], r["split"], float(r["alpha"])) for r in rows]


def write_predictions(path: Path, pred: Prediction, header: str) -> None:
    """CSV ``video_id,person_id,start_frame,p_1..p_C,pred,true`` with the class order in a comment."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        fh.write("# classes: " + ",".join(pred.classes) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        C = len(pred.classes)
        w.writerow(["video_id", "person_id", "start_frame"] + [f"p_{i + 1}" for i in range(C)] + ["pred", "true"])
        for ref, p, name, true in zip(pred.refs, pred.probabilities, pred.predicted, pred.true):
            w.writerow([ref[0], ref[1], ref[2]] + [repr(float(v)) for v in p] + [name, "" if true is None else true])


def read_predictions(path: str | Path) -> Prediction:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    classes = None
    for line in lines:
        if line.startswith("# classes:"):
            classes = [c for c in line[len("# classes:"):].strip().split(",") if c]
    body = [line for line in lines if not line.startswith("#")]
    rows = list(csv.DictReader(body))
    if not rows:
        raise ValueError(f"{path}: no predictions")
    C = sum(1 for k in rows[0] if k.startswith("p_"))
    if classes is None:
        classes = sorted({r["true"] for r in rows} | {r["pred"] for r in rows})
    if len(classes) != C:
        raise ValueError(f"{path}: {C} probability columns but {len(classes)} class names")
    probs = np.array([[float(r[f"p_{i + 1}"]) for i in range(C)] for r in rows])
    refs = [(r["video_id"], r["person_id"], int(r["start_frame"])) for r in rows]
    return Prediction(refs, probs, [r["true"] or None for r in rows], classes)


def evaluate_prediction(pred: Prediction, topk: Sequence[int] = (3, 5)) -> tuple[ConfusionMatrix, MetricsReport]:
    if any(t is None for t in pred.true):
        raise ValueError("predictions lack true labels")
    cm = confusion(pred.true, pred.predicted, pred.classes)
    index = {c: i for i, c in enumerate(pred.classes)}
    true_idx = [index[t] for t in pred.true]
    k = [x for x in topk if x <= len(pred.classes)]
    return cm, metrics(cm, pred.probabilities, true_idx, topk=k)


def effective_class(label: str, disposition: str) -> str:
    if disposition == KEEP:
        return label
    if disposition in (KEEP_NORMAL, MOVED):
        return NORMAL
    return REMOVED


# -------------------------------------------------------------- run record


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    version: str
    results: dict  # cell name -> {"classes", "folds": [metrics dict], "confusion": [[...]], ...}
    comparisons: list[dict]
    labeling: dict
    timings: dict = field(default_factory=dict)
    artifact_hashes: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        with open(path) as fh:
            return cls(**json.load(fh))

    def metrics_only(self) -> dict:
        """The parts that must be identical between runs of the same config."""
        return {"results": self.results, "comparisons": self.comparisons, "labeling": self.labeling,
                "artifact_hashes": self.artifact_hashes}

    def mean_metric(self, cell: str, name: str) -> float:
        return float(np.mean([f[name] for f in self.results[cell]["folds"]]))


# ------------------------------------------------------------------ stages


class StageCache:
    def __init__(self, out_dir: Path):
        self.path = out_dir / "cache.json"
        self.state = json.loads(self.path.read_text()) if self.path.is_file() else {}
        self.report: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.out_dir = out_dir

    def run(self, stage: str, key_parts: dict, fn: Callable[[], list[Path]]) -> dict[str, str]:
        """Run ``fn`` unless the stage key and recorded artifact hashes still match; return artifact hashes."""
        key = _hash_obj(key_parts)
        entry = self.state.get(stage)
        t0 = time.perf_counter()
        if entry and entry["key"] == key and self._intact(entry["hashes"]):
            self.report[stage] = "hit"
            logger.info("stage %s: cache hit", stage)
            self.timings[stage] = time.perf_counter() - t0
            return entry["hashes"]
        logger.info("stage %s: running", stage)
        try:
            outputs = fn()
        except Exception as exc:
            raise StageError(stage, self.out_dir / stage, exc) from exc
        hashes = {str(p.relative_to(self.out_dir)): file_hash(p) for p in sorted(outputs)}
        self.state[stage] = {"key": key, "hashes": hashes}
        self.path.write_text(json.dumps(self.state, indent=1, sort_keys=True) + "\n")
        self.report[stage] = "miss"
        self.timings[stage] = time.perf_counter() - t0
        return hashes

    def _intact(self, hashes: dict[str, str]) -> bool:
        for rel, h in hashes.items():
            p = self.out_dir / rel
            if not p.is_file() or file_hash(p) != h:
                return False
        return True


def _load_split(out: Path, data_root: Path) -> DatasetManifest:
    m = DatasetManifest.load(out / "split" / "manifest.json")
    m.root = data_root
    return m


def _labeled(trajs: Sequence[Trajectory], labeling: TrajectoryLabeling) -> list[Trajectory]:
    keys = labeling.by_key()
    return [t for t in trajs if t.key in keys]


def run_pipeline(config: ExperimentConfig) -> RunRecord:
    config.validate()
    data = Path(config.data_dir).resolve()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    out = out.resolve()
    chash = config.config_hash()
    header = header_line(chash)
    meta = {"toolkit": TOOLKIT, "config_hash": chash}
    config.save(out / "config.json")
    cache = StageCache(out)
    source = DatasetManifest.load(data / "manifest.json")

    # ingest: validate every trajectory file
    def ingest() -> list[Path]:
        trajs = load_manifest_trajectories(source)
        counts: dict[str, int] = {}
        for t in trajs:
            counts[t.class_label] = counts.get(t.class_label, 0) + 1
        short = [t.key for t in trajs if len(t) < 12]
        (out / "ingest").mkdir(exist_ok=True)
        p = out / "ingest" / "summary.json"
        p.write_text(json.dumps({"meta": meta, "trajectories": len(trajs), "per_class": counts,
                                 "frames": int(sum(len(t) for t in trajs)), "too_short": short},
                                indent=1, sort_keys=True) + "\n")
        return [p]

    input_hashes = {"manifest": file_hash(data / "manifest.json"),
                    "files": _hash_obj([file_hash(source.resolve(e)) for e in source.entries])}
    h_ingest = cache.run("ingest", {"inputs": input_hashes, "meta": meta}, ingest)

    def split() -> list[Path]:
        (out / "split").mkdir(exist_ok=True)
        splits = {e.split for e in source.entries}
        if config.resplit or not splits <= {"train", "test"} or "test" not in splits:
            trajs = load_manifest_trajectories(source)
            m = make_split(trajs, config.split_ratio, config.seed, [e.path for e in source.entries],
                           source.resolutions)
        else:
            m = DatasetManifest(entries=list(source.entries), resolutions=dict(source.resolutions))
        p = out / "split" / "manifest.json"
        m.save(p)
        return [p]

    h_split = cache.run("split", {"ingest": h_ingest, "ratio": config.split_ratio, "seed": config.seed,
                                  "resplit": config.resplit}, split)
    manifest = _load_split(out, data)
    train_trajs = load_manifest_trajectories(manifest, "train")
    test_trajs = load_manifest_trajectories(manifest, "test")

    bb_path = out / "backbone" / "backbone.tkbb"

    def backbone_stage() -> list[Path]:
        normal = [t for t in train_trajs if t.class_label == NORMAL]
        if not normal:
            raise ValueError("training split has no normal trajectories for the backbone")
        segs = segment_all(normal)
        b = config.backbone
        model = train_backbone(segs, b.epochs, config.seed, b.hidden, b.learning_rate, b.batch_size)
        bb_path.parent.mkdir(exist_ok=True)
        model.save(bb_path, meta)
        return [bb_path]

    h_bb = cache.run("train-backbone", {"split": h_split, "cfg": asdict(config.backbone), "seed": config.seed},
                     backbone_stage)
    backbone = BackboneModel.load(bb_path)

    scores_path = out / "scores" / "scores.csv"

    def score_stage() -> list[Path]:
        rows = []
        for split_name, trajs in (("train", train_trajs), ("test", test_trajs)):
            for t in trajs:
                segs = segment_trajectory(t)
                if not segs:
                    logger.warning("%s/%s is shorter than one segment; not scored", t.video_id, t.person_id)
                    continue
                _, local, glob = stack_segments(segs)
                raw_hat = backbone.reconstruct_batch(local, glob)
                a = anomaly_score([(s.raw, r) for s, r in zip(segs, raw_hat)])
                rows.append((t.video_id, t.person_id, t.class_label, split_name, a.alpha))
        scores_path.parent.mkdir(exist_ok=True)
        write_scores(scores_path, rows, header)
        return [scores_path]

    h_scores = cache.run("score", {"backbone": h_bb, "split": h_split}, score_stage)

    labels_path = out / "labels" / "labels.csv"
    labels_summary = out / "labels" / "summary.json"

    def labels_stage() -> list[Path]:
        rows = read_scores(scores_path)
        labeling, summary = make_labels(rows, config.groundtruth, config.seed)
        labels_path.parent.mkdir(exist_ok=True)
        labeling.save(labels_path, header)
        summary["meta"] = meta
        labels_summary.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        return [labels_path, labels_summary]

    h_labels = cache.run("make-labels", {"scores": h_scores, "cfg": asdict(config.groundtruth),
                                         "seed": config.seed}, labels_stage)
    labeling = TrajectoryLabeling.load(labels_path)
    train_trajs = _labeled(train_trajs, labeling)
    test_trajs = _labeled(test_trajs, labeling)

    plan_path = out / "augment" / "plan.json"

    def augment_stage() -> list[Path]:
        plan = {"meta": meta, "rho": config.augmentation.rho, "k": config.augmentation.k, "cells": {}}
        for cell in config.grid:
            sel = select_trajectories(train_trajs, labeling, cell.variant, config.seed)
            counts: dict[str, int] = {}
            for t in sel:
                counts[t.class_label] = counts.get(t.class_label, 0) + 1
            method = config.augmentation.decoded if cell.variant == "decoded" else config.augmentation.encoded
            target = max(counts.values()) if counts and method != "none" else None
            plan["cells"][cell.name] = {"method": method, "trajectories": counts,
                                        "target": target, "unit": "segments" if method == "smote" else "trajectories",
                                        "applied": "per fold, training portion only"}
        plan_path.parent.mkdir(exist_ok=True)
        plan_path.write_text(json.dumps(plan, indent=1, sort_keys=True) + "\n")
        return [plan_path]

    h_aug = cache.run("augment", {"labels": h_labels, "split": h_split, "cfg": asdict(config.augmentation),
                                  "grid": [asdict(c) for c in config.grid]}, augment_stage)

    def train_stage() -> list[Path]:
        outputs = []
        for cell in config.grid:
            outputs += _train_cell(cell, config, backbone, train_trajs, labeling, out, meta)
        return outputs

    h_train = cache.run("train-clf", {"backbone": h_bb, "labels": h_labels, "augment": h_aug,
                                      "grid": [asdict(c) for c in config.grid], "train": config.train.to_dict(),
                                      "width": config.width, "filters": config.filters, "seed": config.seed},
                        train_stage)

    results_path = out / "eval" / "results.json"

    def eval_stage() -> list[Path]:
        results = {}
        outputs = []
        for cell in config.grid:
            res, files = _evaluate_cell(cell, config, backbone, test_trajs, labeling, out, header)
            results[cell.name] = res
            outputs += files
        results_path.write_text(json.dumps({"meta": meta, "results": results}, indent=1, sort_keys=True) + "\n")
        return outputs + [results_path]

    h_eval = cache.run("evaluate", {"train": h_train, "split": h_split, "labels": h_labels,
                                    "cfg": asdict(config.evaluation)}, eval_stage)
    results = json.loads(results_path.read_text())["results"]

    compare_path = out / "compare" / "comparisons.json"

    def compare_stage() -> list[Path]:
        comps = []
        for a, b in itertools.combinations(sorted(results), 2):
            comps.append(compare_cells(a, results[a]["fold_macro_accuracy"], b,
                                       results[b]["fold_macro_accuracy"], config.evaluation.alpha))
        compare_path.parent.mkdir(exist_ok=True)
        compare_path.write_text(json.dumps({"meta": meta, "comparisons": comps}, indent=1, sort_keys=True) + "\n")
        return [compare_path]

    h_cmp = cache.run("compare", {"eval": h_eval, "alpha": config.evaluation.alpha}, compare_stage)
    comparisons = json.loads(compare_path.read_text())["comparisons"]

    hashes = {}
    for h in (h_ingest, h_split, h_bb, h_scores, h_labels, h_aug, h_train, h_eval, h_cmp):
        hashes.update(h)
    record = RunRecord(config=config.to_dict(), config_hash=chash, version=__version__, results=results,
                       comparisons=comparisons, labeling=json.loads(labels_summary.read_text()),
                       timings=dict(cache.timings), artifact_hashes=hashes, cache=dict(cache.report))
    record.save(out / "run_record.json")
    return record


def make_labels(rows: Sequence[tuple], cfg: GroundTruthConfig, seed: int = 0,
                candidates: Sequence[float] | None = None) -> tuple[TrajectoryLabeling, dict]:
    """Cluster anomaly scores and reconcile with video labels; rows are (video, person, label, split, alpha)."""
    method = METHOD_ALIASES.get(cfg.method)
    if method is None:
        raise ValueError(f"unknown ground-truth method {cfg.method!r}")
    scores = np.array([r[4] for r in rows], dtype=np.float64)
    summary: dict = {"method": method}
    threshold = None
    if method == "unsupervised":
        gmm = fit_gmm(scores, cfg.max_iter, cfg.tol, seed)
        clusters = assign_clusters(gmm, scores)
        summary.update(means=gmm.means.tolist(), weights=gmm.weights.tolist(), variances=gmm.variances.tolist(),
                       n_iter=gmm.n_iter, converged=gmm.converged)
    else:
        cands = candidate_grid(scores, cfg.candidates) if candidates is None else candidates
        threshold, _ = select_threshold([(s, r[2]) for s, r in zip(scores, rows)], cands)
        clusters = threshold_clusters(scores, threshold)
        summary["threshold"] = threshold
    if len(set(clusters)) == 2:
        summary["silhouette"] = silhouette(scores, clusters)
    else:
        summary["silhouette"] = None
        logger.warning("ground truth: every trajectory fell in one cluster")

    @dataclass
    class _Ref:
        video_id: str
        person_id: str
        class_label: str

    labeling = relabel_trajectories([_Ref(r[0], r[1], r[2]) for r in rows], clusters, method, scores, threshold)
    summary["dispositions"] = labeling.counts()
    return labeling, summary


def _train_cell(cell: GridCell, config: ExperimentConfig, backbone: BackboneModel,
                train_trajs: Sequence[Trajectory], labeling: TrajectoryLabeling, out: Path,
                meta: dict) -> list[Path]:
    """Stratified k-fold over training trajectories; the held-out fold drives early stopping."""
    disp = labeling.by_key()
    usable = [t for t in train_trajs if disp[t.key].disposition != REMOVED]
    if cell.variant != "MPED-NC":
        usable = [t for t in usable if disp[t.key].disposition == KEEP]
    strata = [effective_class(t.class_label, disp[t.key].disposition) for t in usable]
    classes = class_list(select_trajectories(usable, labeling, cell.variant, config.seed), cell.variant)
    if len(classes) < 2:
        raise ValueError(f"{cell.name}: fewer than two classes survive ground-truth relabeling")
    folds = kfold_split(len(usable), config.train.folds, strata, config.seed)
    cell_dir = out / "models" / cell.name
    cell_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    aug = config.augmentation
    for f, (tr_idx, va_idx) in enumerate(folds):
        cfg = replace(config.train, seed=cell_seed(config.seed, cell.name, f))
        tr = [usable[i] for i in tr_idx]
        va = [usable[i] for i in va_idx]
        logger.info("%s fold %d: %d train / %d validation trajectories", cell.name, f, len(tr), len(va))
        if cell.variant == "decoded":
            model = train_decoded(backbone, tr, labeling, cfg, va, classes,
                                  None if aug.decoded == "none" else aug.decoded, aug.k, config.width)
        else:
            model = train_encoded(backbone, tr, labeling, cell.arch, cell.fusion, cell.variant, cfg, va, classes,
                                  None if aug.encoded == "none" else aug.encoded, aug.rho, config.width,
                                  config.filters)
        path = cell_dir / f"fold{f}.tknn"
        model.save(path, meta)
        hist = cell_dir / f"fold{f}_history.json"
        hist.write_text(json.dumps({"meta": meta, "history": model.history}, indent=1, sort_keys=True) + "\n")
        outputs += [path, hist]
    return outputs


def _evaluate_cell(cell: GridCell, config: ExperimentConfig, backbone: BackboneModel,
                   test_trajs: Sequence[Trajectory], labeling: TrajectoryLabeling, out: Path,
                   header: str) -> tuple[dict, list[Path]]:
    model_dir = out / "models" / cell.name
    eval_dir = out / "eval" / cell.name
    eval_dir.mkdir(parents=True, exist_ok=True)
    test = select_trajectories(test_trajs, labeling, cell.variant, config.seed, undersample=False)
    segs = segment_all(test)
    fold_reports, fold_cms, files = [], [], []
    classes = None
    for f in range(config.train.folds):
        model = ClassifierModel.load(model_dir / f"fold{f}.tknn")
        classes = model.classes
        segs_in = [s for s in segs if s.class_label in classes]
        if len(segs_in) != len(segs):
            logger.warning("%s: %d test segments of classes unseen in training skipped",
                           cell.name, len(segs) - len(segs_in))
        if not segs_in:
            raise ValueError(f"{cell.name}: no test segments to evaluate")
        pred = predict(model, backbone, segs_in)
        p = eval_dir / f"fold{f}_predictions.csv"
        write_predictions(p, pred, header)
        files.append(p)
        cm, rep = evaluate_prediction(pred, config.evaluation.topk)
        fold_reports.append(rep.to_dict())
        fold_cms.append(cm.counts)
        votes = pred.trajectory_votes()
        truth = {(r[0], r[1]): t for r, t in zip(pred.refs, pred.true)}
        keys = sorted(votes)
        traj_cm = confusion([truth[k] for k in keys], [votes[k] for k in keys], classes)
        fold_reports[-1]["trajectory_level"] = metrics(traj_cm).to_dict()
    total = np.sum(fold_cms, axis=0)
    cm_path = eval_dir / "confusion.csv"
    cm_path.write_text(f"# {header}\n" + ConfusionMatrix(total, list(classes)).to_csv())
    files.append(cm_path)
    macro = [r["macro_accuracy"] for r in fold_reports]
    res = {"classes": list(classes), "folds": fold_reports, "confusion": total.tolist(),
           "fold_macro_accuracy": macro, "mean_macro_accuracy": float(np.mean(macro)),
           "test_segments": int(total.sum() // len(fold_cms))}
    return res, files


def compare_cells(name_a: str, acc_a: Sequence[float], name_b: str, acc_b: Sequence[float],
                  alpha: float = 0.05) -> dict:
    try:
        return compare_models(acc_a, acc_b, alpha, (name_a, name_b)).to_dict()
    except DegenerateStatsError:
        return {"model_a": name_a, "model_b": name_b, "normality_p": None, "test": "none",
                "statistic": None, "p_value": None, "alpha": alpha, "reject_null": False,
                "degenerate": True, "note": "identical results"}
    except ValueError as exc:
        return {"model_a": name_a, "model_b": name_b, "normality_p": None, "test": "none",
                "statistic": None, "p_value": None, "alpha": alpha, "reject_null": False,
                "degenerate": True, "note": str(exc)}


# ------------------------------------------------------------------ report


def _mean_report(folds: Sequence[dict], classes: Sequence[str]) -> MetricsReport:
    keys = ["overall_accuracy", "macro_accuracy", "weighted_accuracy", "weighted_precision", "weighted_recall",
            "weighted_f1", "iba"]
    vals = {k: float(np.mean([f[k] for f in folds])) for k in keys}
    opt = {}
    for k in ("top3", "top5"):
        v = [f[k] for f in folds]
        opt[k] = None if any(x is None for x in v) else float(np.mean(v))
    recall = {c: float(np.mean([f["per_class_recall"][c] for f in folds])) for c in classes}
    support = {c: int(folds[0]["support"][c]) for c in classes}
    return MetricsReport(per_class_recall=recall, support=support, n_samples=int(folds[0]["n_samples"]),
                         **vals, **opt)


def emit_report(run: RunRecord, out_dir: str | Path) -> list[Path]:
    """Metrics tables (CSV + text), one confusion SVG/CSV per model and the comparison summary.

    Output depends only on ``run``'s results, so regeneration is byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = header_line(run.config_hash)
    reports = {name: _mean_report(r["folds"], r["classes"]) for name, r in run.results.items()}
    files = []

    def put(name: str, text: str) -> None:
        p = out / name
        p.write_text(text)
        files.append(p)

    put("metrics.csv", f"# {head}\n" + metrics_table_csv(reports))
    text = [f"# {head}", "mean over folds, segment level", "", metrics_table_text(reports)]
    for name in sorted(run.results):
        r = run.results[name]
        folds = ", ".join(f"{v:.4f}" for v in r["fold_macro_accuracy"])
        text.append(f"{name}: fold macro accuracy {folds}")
    put("metrics.txt", "\n".join(text) + "\n")
    for name in sorted(run.results):
        r = run.results[name]
        cm = ConfusionMatrix(np.asarray(r["confusion"], dtype=np.int64), list(r["classes"]))
        put(f"confusion_{name}.csv", f"# {head}\n" + cm.to_csv())
        put(f"confusion_{name}.svg", confusion_svg(cm, f"{name} (row-normalized)", head))
    comps = []
    for c in run.comparisons:
        if c["test"] == "none":
            continue
        comps.append(ComparisonResult(**{k: c[k] for k in ("model_a", "model_b", "normality_p", "test",
                                                            "statistic", "p_value", "alpha", "reject_null",
                                                            "degenerate")}))
    skipped = [f"{c['model_a']} vs {c['model_b']}: not tested ({c.get('note', '')})"
               for c in run.comparisons if c["test"] == "none"]
    body = comparison_summary(comps) if comps or not skipped else ""
    put("comparison.txt", f"# {head}\n" + body + "".join(s + "\n" for s in skipped))
    return files


def metrics_digest(run: RunRecord) -> str:
    buf = io.StringIO()
    json.dump(run.metrics_only(), buf, sort_keys=True)
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()
