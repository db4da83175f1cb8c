"""Crime classifiers on top of the frozen backbone.

Encoded-based models (MPED-C: crime classes, MPED-NC: crime classes plus
normal) read the encoder hidden-state sequences of both branches and fuse
them early (weighted element-wise sum or concatenation of the branch trunk
features) or late (sum of the two branch probability vectors, renormalized).
The decoded-based model reads raw-space reconstructions with an LSTM head.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .augmentation import DEFAULT_K, DEFAULT_RHO, shift_balance, smote_oversample
from .backbone import BackboneModel
from .groundtruth import KEEP, KEEP_NORMAL, MOVED, TrajectoryLabeling
from .tinynet.checkpoint import quantize, read_checkpoint, write_checkpoint
from .tinynet.layers import Param, ShapeError
from .tinynet.network import Network, build_network
from .tinynet.training import TrainConfig, TrainResult, predict_proba, train
from .trajectory import N_COORDS, NORMAL, SEGMENT_LENGTH, Segment, Trajectory, segment_all, stack_segments

logger = logging.getLogger(__name__)

MAGIC = b"TKNN"
ARCHITECTURES = ("A1", "A2", "A3")
FUSIONS = ("late", "early-agg", "early-cat")
VARIANTS = ("MPED-C", "MPED-NC", "decoded")
DEFAULT_WIDTH = 64
DEFAULT_FILTERS = 64
KERNEL = 3
EIGEN_FLOOR = 1e-8


class LabelingMissingError(ValueError):
    pass


# ---------------------------------------------------------- architectures


def architecture_specs(arch: str, input_shape: tuple[int, int], classes: int, head: str = "full",
                       width: int = DEFAULT_WIDTH, filters: int = DEFAULT_FILTERS) -> list[dict]:
    T, D = input_shape
    arch = arch.upper()
    if head not in ("full", "trunk"):
        raise ValueError(f"unknown head {head!r}")
    if head == "trunk" and arch != "A3":
        raise ValueError(f"trunk head is only defined for A3 (early fusion), not {arch}")
    if arch == "A1":
        body = [{"kind": "flatten"}]
        feat = T * D
    elif arch == "A2":
        body = [{"kind": "lstm", "in_dim": D, "units": width}]
        feat = width
    elif arch == "A3":
        body = [{"kind": "conv1d", "in_channels": D, "filters": filters, "kernel": KERNEL},
                {"kind": "relu"}, {"kind": "global-max-pool"}]
        feat = filters
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    if head == "trunk":
        return body
    return body + dense_head(feat, classes, width)


def dense_head(in_dim: int, classes: int, width: int = DEFAULT_WIDTH) -> list[dict]:
    return [{"kind": "dense", "in_dim": in_dim, "units": width}, {"kind": "relu"},
            {"kind": "dense", "in_dim": width, "units": classes}, {"kind": "softmax"}]


def build_architecture(arch: str, input_shape: tuple[int, int], classes: int, head: str = "full",
                       seed: int = 0, width: int = DEFAULT_WIDTH, filters: int = DEFAULT_FILTERS) -> Network:
    """A1: flatten-dense; A2: LSTM-dense; A3: conv1d-maxpool-dense. ``trunk`` keeps A3's conv part."""
    specs = architecture_specs(arch, input_shape, classes, head, width, filters)
    return build_network(specs, input_shape, seed)


# ------------------------------------------------------------------ fusion


@dataclass
class FusionSpec:
    mode: str
    w_l: np.ndarray | None = None
    w_g: np.ndarray | None = None

    @classmethod
    def aggregate(cls, size: int) -> "FusionSpec":
        return cls("early-agg", np.full(size, 0.5), np.full(size, 0.5))


def fuse_early(z_l: np.ndarray, z_g: np.ndarray, spec: FusionSpec) -> np.ndarray:
    """Weighted element-wise sum (weights broadcast over leading axes) or feature concatenation."""
    z_l = np.asarray(z_l, dtype=np.float64)
    z_g = np.asarray(z_g, dtype=np.float64)
    if spec.mode == "early-cat":
        if z_l.shape[:-1] != z_g.shape[:-1]:
            raise ShapeError(f"cannot concatenate {z_l.shape} and {z_g.shape}")
        return np.concatenate([z_l, z_g], axis=-1)
    if spec.mode != "early-agg":
        raise ValueError(f"unsupported early fusion mode {spec.mode!r}")
    if z_l.shape != z_g.shape:
        raise ShapeError(f"aggregate fusion needs equal shapes, got {z_l.shape} and {z_g.shape}")
    return spec.w_l * z_l + spec.w_g * z_g


def fuse_late(p_local: np.ndarray, p_global: np.ndarray) -> np.ndarray:
    """Sum two probability vectors (or rows of them) and L1-normalize."""
    q = np.asarray(p_local, dtype=np.float64) + np.asarray(p_global, dtype=np.float64)
    return q / q.sum(axis=-1, keepdims=True)


class EarlyFusionModel:
    """Per-branch A3 trunks, fused features, shared dense head; trained end to end."""

    def __init__(self, input_shape: tuple[int, int], classes: int, mode: str, seed: int = 0,
                 width: int = DEFAULT_WIDTH, filters: int = DEFAULT_FILTERS):
        if mode not in ("early-agg", "early-cat"):
            raise ValueError(f"unknown early fusion mode {mode!r}")
        self.mode = mode
        self.trunk_l = build_architecture("A3", input_shape, classes, "trunk", seed, width, filters)
        self.trunk_g = build_architecture("A3", input_shape, classes, "trunk", seed + 1, width, filters)
        feat = self.trunk_l.output_shape[-1]
        self.w_l = Param("w_l", np.full(feat, 0.5))
        self.w_g = Param("w_g", np.full(feat, 0.5))
        head_in = feat if mode == "early-agg" else 2 * feat
        self.head = build_network(dense_head(head_in, classes, width), (head_in,), seed + 2)
        self._cache = None

    @property
    def spec(self) -> FusionSpec:
        return FusionSpec(self.mode, self.w_l.value, self.w_g.value)

    def parameters(self) -> list[Param]:
        fusion = [self.w_l, self.w_g] if self.mode == "early-agg" else []
        return self.trunk_l.parameters() + self.trunk_g.parameters() + fusion + self.head.parameters()

    def forward(self, inputs):
        z_l, z_g = inputs
        f_l = self.trunk_l.forward(z_l)
        f_g = self.trunk_g.forward(z_g)
        self._cache = (f_l, f_g)
        return self.head.forward(fuse_early(f_l, f_g, self.spec))

    def backward(self, dout):
        f_l, f_g = self._cache
        dz = self.head.backward(dout)
        if self.mode == "early-agg":
            self.w_l.grad += (dz * f_l).sum(axis=0)
            self.w_g.grad += (dz * f_g).sum(axis=0)
            d_l, d_g = dz * self.w_l.value, dz * self.w_g.value
        else:
            F = f_l.shape[-1]
            d_l, d_g = dz[:, :F], dz[:, F:]
        return self.trunk_l.backward(d_l), self.trunk_g.backward(d_g)


class LateFusionModel:
    """Same architecture on each branch; branch probabilities are summed and renormalized."""

    def __init__(self, arch: str, input_shape: tuple[int, int], classes: int, seed: int = 0,
                 width: int = DEFAULT_WIDTH, filters: int = DEFAULT_FILTERS):
        self.net_l = build_architecture(arch, input_shape, classes, "full", seed, width, filters)
        self.net_g = build_architecture(arch, input_shape, classes, "full", seed + 1, width, filters)

    def parameters(self) -> list[Param]:
        return self.net_l.parameters() + self.net_g.parameters()

    def forward(self, inputs):
        z_l, z_g = inputs
        return fuse_late(self.net_l.forward(z_l), self.net_g.forward(z_g))


# ---------------------------------------------------------------- models


@dataclass
class ClassifierModel:
    variant: str
    arch: str
    fusion: str | None
    classes: list[str]
    network: object
    backbone_ref: str
    hidden: int
    seed: int = 0
    width: int = DEFAULT_WIDTH
    filters: int = DEFAULT_FILTERS
    history: list = field(default_factory=list)
    input_stats: dict | None = None  # decoded only: fixed whitening (mean, matrix)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def parameters(self) -> list[Param]:
        return self.network.parameters()

    def descriptor(self) -> dict:
        return {"variant": self.variant, "arch": self.arch, "fusion": self.fusion, "classes": self.classes,
                "backbone_ref": self.backbone_ref, "hidden": self.hidden, "seed": self.seed,
                "width": self.width, "filters": self.filters, "input_stats": self.input_stats}

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        desc = self.descriptor()
        if meta:
            desc["meta"] = meta
        write_checkpoint(path, MAGIC, desc, [p.value for p in self.parameters()])

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        desc, weights = read_checkpoint(path, MAGIC)
        model = make_classifier(desc["variant"], desc["arch"], desc["fusion"], desc["classes"],
                                desc["backbone_ref"], desc["hidden"], desc["seed"], desc["width"],
                                desc["filters"], desc.get("input_stats"))
        params = model.parameters()
        if len(params) != len(weights):
            raise ValueError(f"{path}: weight count does not match architecture")
        for p, w in zip(params, weights):
            p.value[...] = w
        return model


def make_classifier(variant: str, arch: str, fusion: str | None, classes: Sequence[str], backbone_ref: str,
                    hidden: int, seed: int = 0, width: int = DEFAULT_WIDTH,
                    filters: int = DEFAULT_FILTERS, input_stats: dict | None = None) -> ClassifierModel:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    arch = arch.upper()
    C = len(classes)
    if variant == "decoded":
        specs = [{"kind": "lstm", "in_dim": N_COORDS, "units": width},
                 {"kind": "dense", "in_dim": width, "units": C}, {"kind": "softmax"}]
        if input_stats is not None:
            specs.insert(0, {"kind": "whiten", **input_stats})
        net = build_network(specs, (SEGMENT_LENGTH, N_COORDS), seed)
        fusion = None
    else:
        shape = (SEGMENT_LENGTH, hidden)
        if fusion == "late":
            net = LateFusionModel(arch, shape, C, seed, width, filters)
        elif fusion in ("early-agg", "early-cat"):
            if arch != "A3":
                raise ValueError("early fusion is only wired to architecture A3")
            net = EarlyFusionModel(shape, C, fusion, seed, width, filters)
        else:
            raise ValueError(f"unknown fusion {fusion!r}")
    return ClassifierModel(variant, arch, fusion, list(classes), net, backbone_ref, hidden, seed, width, filters,
                           input_stats=input_stats)


# -------------------------------------------------------------- datasets


def _labels_for(trajectories: Sequence[Trajectory], labeling: TrajectoryLabeling | None):
    if labeling is None:
        raise LabelingMissingError("trajectory-level labels are required; run make-labels first")
    table = labeling.by_key()
    out = []
    for t in trajectories:
        rec = table.get(t.key)
        if rec is None:
            raise LabelingMissingError(
                f"no trajectory-level label for {t.video_id}/{t.person_id}; run make-labels first")
        out.append(rec.disposition)
    return out


def select_trajectories(trajectories: Sequence[Trajectory], labeling: TrajectoryLabeling | None,
                        variant: str, seed: int = 0, undersample: bool = True) -> list[Trajectory]:
    """Trajectories a variant consumes, relabelled to their class name.

    Crime variants keep crime trajectories whose disposition kept the crime
    class. MPED-NC adds trajectory-level normal ones (kept normal or moved to
    normal), randomly under-sampled to the crime trajectory count when
    ``undersample`` is set.
    """
    disp = _labels_for(trajectories, labeling)
    crime = [t for t, d in zip(trajectories, disp) if d == KEEP]
    if variant != "MPED-NC":
        return crime
    normal = [replace(t, class_label=NORMAL, frame_indices=t.frame_indices.copy())
              for t, d in zip(trajectories, disp) if d in (KEEP_NORMAL, MOVED)]
    if undersample and len(normal) > len(crime):
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(normal), size=len(crime), replace=False))
        normal = [normal[i] for i in keep]
    return crime + normal


def class_list(trajectories: Sequence[Trajectory], variant: str) -> list[str]:
    crime = sorted({t.class_label for t in trajectories if t.class_label != NORMAL})
    return crime + [NORMAL] if variant == "MPED-NC" else crime


def _segment_arrays(segments: Sequence[Segment], classes: Sequence[str]):
    index = {c: i for i, c in enumerate(classes)}
    missing = {s.class_label for s in segments} - set(index)
    if missing:
        raise ValueError(f"segments carry classes outside the model's class list: {sorted(missing)}")
    y = np.array([index[s.class_label] for s in segments], dtype=np.int64)
    return y


def encoded_inputs(backbone: BackboneModel, segments: Sequence[Segment]) -> tuple[np.ndarray, np.ndarray]:
    _, local, glob = stack_segments(segments)
    return backbone.latents_batch(local, glob)


def decoded_inputs(backbone: BackboneModel, segments: Sequence[Segment]) -> np.ndarray:
    _, local, glob = stack_segments(segments)
    return backbone.reconstruct_batch(local, glob)


def _finish(model: ClassifierModel, history) -> ClassifierModel:
    for p, w in zip(model.parameters(), quantize([p.value for p in model.parameters()])):
        p.value[...] = w
    model.history = history
    return model


def train_encoded(backbone: BackboneModel, train_trajs: Sequence[Trajectory], labeling: TrajectoryLabeling,
                  arch: str, fusion: str, variant: str, cfg: TrainConfig,
                  val_trajs: Sequence[Trajectory] | None = None, classes: Sequence[str] | None = None,
                  augment: str | None = None, rho: float = DEFAULT_RHO, width: int = DEFAULT_WIDTH,
                  filters: int = DEFAULT_FILTERS) -> ClassifierModel:
    """Train MPED-C or MPED-NC on frozen backbone encodings.

    ``augment="shift"`` balances the training trajectories with joint shifting
    before segmentation. Validation trajectories (if given) drive early
    stopping; otherwise ``cfg.validation_fraction`` of the segments is held out.
    """
    if variant not in ("MPED-C", "MPED-NC"):
        raise ValueError(f"train_encoded handles MPED-C / MPED-NC, not {variant!r}")
    tr = select_trajectories(train_trajs, labeling, variant, cfg.seed)
    if not tr:
        raise ValueError(f"{variant}: no trajectories left after ground-truth relabeling")
    if variant == "MPED-C" and all(t.class_label == NORMAL for t in tr):
        raise ValueError("MPED-C needs crime trajectories; got normal-only data")
    classes = list(classes) if classes is not None else class_list(tr, variant)
    if augment == "shift":
        tr = list(tr) + shift_balance(tr, seed=cfg.seed, rho=rho)
    elif augment not in (None, "none"):
        raise ValueError(f"encoded models support shift augmentation only, not {augment!r}")
    segs = segment_all(tr)
    x = encoded_inputs(backbone, segs)
    y = _segment_arrays(segs, classes)
    validation = None
    if val_trajs is not None:
        va = segment_all(select_trajectories(val_trajs, labeling, variant, cfg.seed))
        if va:
            validation = (encoded_inputs(backbone, va), _segment_arrays(va, classes))
    model = make_classifier(variant, arch, fusion, classes, backbone.fingerprint(), backbone.hidden,
                            cfg.seed, width, filters)
    net = model.network
    if isinstance(net, LateFusionModel):
        hist = []
        for branch, (sub, xi) in enumerate(((net.net_l, x[0]), (net.net_g, x[1]))):
            bcfg = replace(cfg, seed=cfg.seed + 101 * (branch + 1))
            bval = None if validation is None else (validation[0][branch], validation[1])
            hist.append(train(sub, xi, y, bcfg, bval).history)
    else:
        hist = train(net, x, y, cfg, validation).history
    return _finish(model, hist)


def input_statistics(x: np.ndarray, floor: float = EIGEN_FLOOR) -> dict:
    """PCA whitening of per-frame feature vectors pooled over samples and time, rounded to float32.

    Eigenvalues are floored at ``floor`` times the largest so flat directions stay bounded.
    """
    flat = np.asarray(x, dtype=np.float64).reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / max(len(flat) - 1, 1)
    ev, vecs = np.linalg.eigh(cov)
    top = max(float(ev.max()), np.finfo(np.float64).tiny)
    matrix = vecs / np.sqrt(np.maximum(ev, floor * top))
    return {"mean": quantize([mean])[0].tolist(), "matrix": quantize([matrix])[0].tolist()}


def train_decoded(backbone: BackboneModel, train_trajs: Sequence[Trajectory], labeling: TrajectoryLabeling,
                  cfg: TrainConfig, val_trajs: Sequence[Trajectory] | None = None,
                  classes: Sequence[str] | None = None, augment: str | None = None, k: int = DEFAULT_K,
                  width: int = DEFAULT_WIDTH) -> ClassifierModel:
    """LSTM + dense classifier over raw-space reconstructions of crime segments.

    ``augment="smote"`` oversamples the flattened reconstructed segments.
    Reconstructions vary mostly along the box position and only faintly along
    the directions that carry the class, so the network starts with a fixed
    whitening fitted on the training reconstructions before oversampling.
    """
    tr = select_trajectories(train_trajs, labeling, "decoded", cfg.seed)
    if any(t.class_label == NORMAL for t in tr):
        raise ValueError("the decoded classifier is trained on crime classes only")
    if not tr:
        raise ValueError("decoded: no crime trajectories left after ground-truth relabeling")
    classes = list(classes) if classes is not None else class_list(tr, "decoded")
    if NORMAL in classes:
        raise ValueError("the decoded classifier is trained on crime classes only")
    segs = segment_all(tr)
    x = decoded_inputs(backbone, segs)
    y = _segment_arrays(segs, classes)
    stats = input_statistics(x)
    if augment == "smote":
        groups = {c: x[y == i].reshape(-1, SEGMENT_LENGTH * N_COORDS) for i, c in enumerate(classes) if (y == i).any()}
        balanced = smote_oversample(groups, k=k, seed=cfg.seed)
        names = sorted(balanced)
        x = np.concatenate([balanced[c].reshape(-1, SEGMENT_LENGTH, N_COORDS) for c in names])
        y = np.concatenate([np.full(len(balanced[c]), classes.index(c)) for c in names])
    elif augment not in (None, "none"):
        raise ValueError(f"decoded models support smote augmentation only, not {augment!r}")
    validation = None
    if val_trajs is not None:
        va = segment_all(select_trajectories(val_trajs, labeling, "decoded", cfg.seed))
        if va:
            validation = (decoded_inputs(backbone, va), _segment_arrays(va, classes))
    model = make_classifier("decoded", "LSTM", None, classes, backbone.fingerprint(), backbone.hidden,
                            cfg.seed, width, input_stats=stats)
    result: TrainResult = train(model.network, x, y, cfg, validation)
    return _finish(model, result.history)


# ------------------------------------------------------------- prediction


@dataclass
class Prediction:
    refs: list[tuple[str, str, int]]
    probabilities: np.ndarray  # (N, C)
    true: list[str | None]
    classes: list[str]

    @property
    def predicted(self) -> list[str]:
        return [self.classes[i] for i in self.probabilities.argmax(axis=1)]

    def trajectory_votes(self) -> dict[tuple[str, str], str]:
        return trajectory_votes(self.refs, self.probabilities, self.classes)


def trajectory_votes(refs, probabilities: np.ndarray, classes: Sequence[str]) -> dict[tuple[str, str], str]:
    """Majority vote of segment argmaxes per trajectory; ties go to the larger summed probability."""
    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, (vid, pid, _) in enumerate(refs):
        groups[(vid, pid)].append(i)
    out = {}
    for key, idx in groups.items():
        p = probabilities[idx]
        votes = np.bincount(p.argmax(axis=1), minlength=p.shape[1])
        tied = np.flatnonzero(votes == votes.max())
        summed = p.sum(axis=0)
        out[key] = classes[int(tied[np.argmax(summed[tied])])]
    return out


def predict(model: ClassifierModel, backbone: BackboneModel, segments: Sequence[Segment]) -> Prediction:
    if model.backbone_ref != backbone.fingerprint():
        raise ValueError(f"classifier was trained on backbone {model.backbone_ref}, "
                         f"got {backbone.fingerprint()}")
    if model.variant == "decoded":
        x = decoded_inputs(backbone, segments)
    else:
        x = encoded_inputs(backbone, segments)
    probs = predict_proba(model.network, x) if segments else np.zeros((0, model.n_classes))
    return Prediction([s.trajectory_ref for s in segments], probs, [s.class_label for s in segments],
                      list(model.classes))


def label_counts(trajectories: Sequence[Trajectory]) -> dict[str, int]:
    return dict(Counter(t.class_label for t in trajectories))
