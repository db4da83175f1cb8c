"""Command-line entry point: ``trajkit <command> ...``.

Exit status is 0 on success, 1 on validation errors (bad arguments, config or
input files) and 2 on runtime failures. ``TRAJKIT_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augmentation import shift_balance, smote_oversample
from .backbone import BackboneModel, train_backbone
from .classifiers import (class_list, decoded_inputs, predict, select_trajectories,
                          train_decoded, train_encoded)
from .evaluation.metrics import ConfusionMatrix
from .evaluation.report import confusion_svg
from .groundtruth import TrajectoryLabeling, anomaly_score
from .pipeline import (METHOD_ALIASES, TOOLKIT, ExperimentConfig, GroundTruthConfig, RunRecord, StageError,
                       ValidationError, compare_cells, effective_class, emit_report, evaluate_prediction,
                       make_labels, read_predictions, read_scores, run_pipeline, write_predictions,
                       write_scores)
from .synthetic import default_regimes, generate_synthetic, write_corpus
from .tinynet.training import TrainConfig, kfold_split
from .trajectory import (NORMAL, DatasetManifest, ManifestEntry, export_trajectory, load_manifest_trajectories,
                         make_split, segment_all, segment_trajectory, stack_segments)

logger = logging.getLogger("trajkit")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
VARIANT_NAMES = {"mped-c": "MPED-C", "mped-nc": "MPED-NC", "decoded": "decoded"}


def _json_out(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _manifest(path: str) -> DatasetManifest:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"manifest {p} not found")
    return DatasetManifest.load(p)


def _absolute(manifest: DatasetManifest) -> list[ManifestEntry]:
    return [replace(e, path=str(manifest.resolve(e).resolve())) for e in manifest.entries]


# ---------------------------------------------------------------- commands


def cmd_synth(a) -> None:
    regimes = default_regimes(a.classes, include_normal=not a.no_normal)
    if a.frames:
        regimes = [replace(r, n_frames=a.frames) for r in regimes]
    trajs = generate_synthetic(regimes, a.per_class, a.seed)
    m = write_corpus(trajs, a.out, (a.width, a.height), a.ratio, a.seed)
    print(f"wrote {len(m.entries)} trajectories to {a.out}")


def cmd_ingest(a) -> None:
    m = _manifest(a.manifest)
    trajs = load_manifest_trajectories(m)
    counts: dict[str, dict[str, int]] = {}
    for e, t in zip(m.entries, trajs):
        counts.setdefault(e.split, {}).setdefault(t.class_label, 0)
        counts[e.split][t.class_label] += 1
    _json_out({"toolkit": TOOLKIT, "trajectories": len(trajs), "frames": int(sum(len(t) for t in trajs)),
               "segments": len(segment_all(trajs)), "per_split_class": counts}, a.out)


def cmd_split(a) -> None:
    m = _manifest(a.manifest)
    trajs = load_manifest_trajectories(m)
    entries = _absolute(m)
    new = make_split(trajs, a.ratio, a.seed, [e.path for e in entries], m.resolutions)
    new.save(a.out)
    print(f"wrote {a.out}: " + ", ".join(f"{s}={len(new.split_entries(s))}" for s in ("train", "test")))


def cmd_train_backbone(a) -> None:
    m = _manifest(a.manifest)
    normal = [t for t in load_manifest_trajectories(m, "train") if t.class_label == NORMAL]
    if not normal:
        raise ValidationError("no normal trajectories in the training split")
    model = train_backbone(segment_all(normal), a.epochs, a.seed, a.hidden, a.lr, a.batch_size)
    model.save(a.out, {"toolkit": TOOLKIT})
    print(f"backbone {model.fingerprint()} final mse {model.final_loss:.6g} -> {a.out}")


def cmd_score(a) -> None:
    m = _manifest(a.manifest)
    backbone = BackboneModel.load(a.backbone)
    rows = []
    for split in ("train", "test"):
        for t in load_manifest_trajectories(m, split):
            segs = segment_trajectory(t)
            if not segs:
                logger.warning("%s/%s shorter than one segment; skipped", t.video_id, t.person_id)
                continue
            _, local, glob = stack_segments(segs)
            raw_hat = backbone.reconstruct_batch(local, glob)
            rows.append((t.video_id, t.person_id, t.class_label, split,
                         anomaly_score([(s.raw, r) for s, r in zip(segs, raw_hat)]).alpha))
    write_scores(Path(a.out), rows, f"{TOOLKIT} backbone={backbone.fingerprint()}")
    print(f"scored {len(rows)} trajectories -> {a.out}")


def cmd_make_labels(a) -> None:
    rows = read_scores(a.scores)
    cands = [float(c) for c in a.candidates.split(",")] if a.candidates else None
    cfg = GroundTruthConfig(method=a.method, candidates=a.n_candidates)
    labeling, summary = make_labels(rows, cfg, a.seed, cands)
    labeling.save(a.out, TOOLKIT)
    print(json.dumps({k: summary[k] for k in ("method", "silhouette", "dispositions")}, sort_keys=True))


def cmd_augment(a) -> None:
    m = _manifest(a.manifest)
    labeling = TrajectoryLabeling.load(a.labels)
    train_trajs = load_manifest_trajectories(m, "train")
    crime = select_trajectories(train_trajs, labeling, "MPED-C", a.seed)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = _absolute(m)
    if a.method == "shift":
        new = shift_balance(crime, seed=a.seed, rho=a.rho)
        (out / "trajectories").mkdir(exist_ok=True)
        res = {}
        for t in new:
            p = out / "trajectories" / f"{t.video_id}__{t.person_id}.csv"
            resolution = m.resolutions.get(t.video_id, (1.0, 1.0))
            export_trajectory(t, p, resolution)
            entries.append(ManifestEntry(str(p.resolve()), t.video_id, t.person_id, t.class_label, "train"))
            res[t.video_id] = resolution
        DatasetManifest(entries, {**m.resolutions, **res}).save(out / "manifest.json")
        # labels for the generated trajectories inherit the source disposition
        recs = list(labeling.records)
        by_key = labeling.by_key()
        for t in new:
            src = by_key[(t.video_id, t.person_id.split("~aug")[0])]
            recs.append(replace(src, person_id=t.person_id))
        TrajectoryLabeling(recs, labeling.method, labeling.threshold).save(out / "labels.csv", TOOLKIT)
        print(f"shift: {len(new)} trajectories added -> {out}")
    else:
        if not a.backbone:
            raise ValidationError("smote works on reconstructed segments; pass --backbone")
        backbone = BackboneModel.load(a.backbone)
        classes = class_list(crime, "decoded")
        segs = segment_all(crime)
        x = decoded_inputs(backbone, segs)
        groups = {c: x[[i for i, s in enumerate(segs) if s.class_label == c]].reshape(-1, x.shape[1] * x.shape[2])
                  for c in classes}
        balanced = smote_oversample(groups, k=a.k, seed=a.seed)
        names = sorted(balanced)
        np.savez(out / "smote.npz", x=np.concatenate([balanced[c] for c in names]),
                 y=np.concatenate([[c] * len(balanced[c]) for c in names]), shape=np.array(x.shape[1:]))
        DatasetManifest(entries, dict(m.resolutions)).save(out / "manifest.json")
        print("smote: " + ", ".join(f"{c}={len(balanced[c])}" for c in names) + f" -> {out / 'smote.npz'}")


def cmd_train_clf(a) -> None:
    m = _manifest(a.manifest)
    backbone = BackboneModel.load(a.backbone)
    if not Path(a.labels).is_file():
        raise ValidationError(f"labels file {a.labels} not found; run make-labels first")
    labeling = TrajectoryLabeling.load(a.labels)
    variant = VARIANT_NAMES[a.variant]
    keys = labeling.by_key()
    train_trajs = [t for t in load_manifest_trajectories(m, "train") if t.key in keys]
    test_trajs = [t for t in load_manifest_trajectories(m, "test") if t.key in keys]
    sel = select_trajectories(train_trajs, labeling, variant, a.seed)
    classes = class_list(sel, variant)
    usable = [t for t in train_trajs
              if effective_class(t.class_label, keys[t.key].disposition) in set(classes)]
    strata = [effective_class(t.class_label, keys[t.key].disposition) for t in usable]
    cfg = TrainConfig(learning_rate=a.lr, max_epochs=a.epochs, batch_size=a.batch_size, folds=a.folds,
                      patience=a.patience, seed=a.seed)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    augment = None if a.augment == "none" else a.augment
    test = segment_all(select_trajectories(test_trajs, labeling, variant, a.seed, undersample=False))
    test = [s for s in test if s.class_label in classes]
    for f, (tr, va) in enumerate(kfold_split(len(usable), a.folds, strata, a.seed)):
        fcfg = replace(cfg, seed=a.seed * 1000 + f)
        tr_t, va_t = [usable[i] for i in tr], [usable[i] for i in va]
        if variant == "decoded":
            model = train_decoded(backbone, tr_t, labeling, fcfg, va_t, classes, augment, a.k, a.width)
        else:
            model = train_encoded(backbone, tr_t, labeling, a.arch, a.fusion, variant, fcfg, va_t, classes,
                                  augment, a.rho, a.width, a.filters)
        model.save(out / f"fold{f}.tknn", {"toolkit": TOOLKIT})
        if test:
            write_predictions(out / f"fold{f}_predictions.csv", predict(model, backbone, test), TOOLKIT)
        print(f"fold {f}: {len(tr_t)} train / {len(va_t)} validation trajectories -> {out / f'fold{f}.tknn'}")


def cmd_evaluate(a) -> None:
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    folds, total, classes = [], None, None
    for path in a.pred:
        pred = read_predictions(path)
        cm, rep = evaluate_prediction(pred, a.topk)
        if classes is not None and classes != cm.classes:
            raise ValidationError("prediction files disagree on the class list")
        classes = cm.classes
        total = cm.counts if total is None else total + cm.counts
        folds.append(rep)
    name = a.name or Path(a.pred[0]).parent.name or "model"
    cm = ConfusionMatrix(total, classes)
    header = f"# {TOOLKIT}\n"
    (out / "metrics.txt").write_text(header + "".join(f"[{p}]\n{r.to_text()}\n" for p, r in zip(a.pred, folds)))
    (out / "confusion.csv").write_text(header + cm.to_csv())
    (out / "confusion.svg").write_text(confusion_svg(cm, name, TOOLKIT))
    summary = {"toolkit": TOOLKIT, "name": name, "classes": classes, "folds": [r.to_dict() for r in folds],
               "fold_macro_accuracy": [r.macro_accuracy for r in folds]}
    (out / "metrics.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{name}: macro accuracy " + ", ".join(f"{r.macro_accuracy:.4f}" for r in folds))


def _fold_accuracies(path: str) -> dict[str, list[float]]:
    with open(path) as fh:
        d = json.load(fh)
    if "fold_macro_accuracy" in d:
        return {d.get("name", Path(path).stem): d["fold_macro_accuracy"]}
    if "results" in d:
        return {k: v["fold_macro_accuracy"] for k, v in d["results"].items()}
    raise ValidationError(f"{path}: no fold accuracies (expected evaluate metrics.json or run_record.json)")


def cmd_compare(a) -> None:
    runs: dict[str, list[float]] = {}
    for p in a.runs:
        runs.update(_fold_accuracies(p))
    if len(runs) < 2:
        raise ValidationError("compare needs at least two models")
    names = list(runs)
    res = [compare_cells(x, runs[x], y, runs[y], a.alpha) for i, x in enumerate(names) for y in names[i + 1:]]
    _json_out({"toolkit": TOOLKIT, "comparisons": res}, a.out)


def cmd_report(a) -> None:
    files = emit_report(RunRecord.load(a.run), a.out)
    print(f"wrote {len(files)} report files to {a.out}")


def cmd_run(a) -> None:
    if a.config:
        cfg = ExperimentConfig.load(a.config)
    else:
        if not (a.data and a.out):
            raise ValidationError("run needs --config or both --data and --out")
        cfg = ExperimentConfig(a.data, a.out)
    overrides = {k: v for k, v in (("data_dir", a.data), ("out_dir", a.out), ("seed", a.seed)) if v is not None}
    cfg = replace(cfg, **overrides)
    if a.epochs is not None:
        cfg.train = replace(cfg.train, max_epochs=a.epochs)
    if a.batch_size is not None:
        cfg.train = replace(cfg.train, batch_size=a.batch_size)
    if a.backbone_epochs is not None:
        cfg.backbone = replace(cfg.backbone, epochs=a.backbone_epochs)
    if a.method is not None:
        cfg.groundtruth = replace(cfg.groundtruth, method=a.method)
    record = run_pipeline(cfg)
    emit_report(record, Path(cfg.out_dir) / "report")
    print("stages: " + ", ".join(f"{k}={v}" for k, v in record.cache.items()))
    for name, r in sorted(record.results.items()):
        print(f"{name}: mean macro accuracy {r['mean_macro_accuracy']:.4f}")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajkit", description="Skeleton-trajectory crime classification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic trajectory corpus with a split manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=3, help="number of crime classes (1-5)")
    s.add_argument("--per-class", type=int, default=60)
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--no-normal", action="store_true")
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=float, default=1920.0)
    s.add_argument("--height", type=float, default=1080.0)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("ingest", help="validate and summarize the trajectory files of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("split", help="re-split a manifest per class")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_split)

    s = sub.add_parser("train-backbone", help="train the autoencoder on normal training trajectories")
    s.add_argument("--manifest", required=True)
    s.add_argument("--epochs", type=int, default=60)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hidden", type=int, default=16)
    s.add_argument("--lr", type=float, default=5e-3)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_backbone)

    s = sub.add_parser("score", help="anomaly score of every trajectory")
    s.add_argument("--backbone", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_score)

    s = sub.add_parser("make-labels", help="trajectory-level ground truth from scores")
    s.add_argument("--scores", required=True)
    s.add_argument("--method", choices=sorted(METHOD_ALIASES), default="gmm")
    s.add_argument("--candidates", help="comma-separated thresholds (threshold method)")
    s.add_argument("--n-candidates", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_make_labels)

    s = sub.add_parser("augment", help="balance crime classes by shifting or SMOTE")
    s.add_argument("--method", choices=["shift", "smote"], required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--backbone")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rho", type=float, default=0.1)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_augment)

    s = sub.add_parser("train-clf", help="k-fold classifier training with test-split predictions")
    s.add_argument("--manifest", required=True)
    s.add_argument("--backbone", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--variant", choices=sorted(VARIANT_NAMES), required=True)
    s.add_argument("--arch", type=str.upper, choices=["A1", "A2", "A3"], default="A3")
    s.add_argument("--fusion", choices=["late", "early-agg", "early-cat"], default="early-agg")
    s.add_argument("--augment", choices=["none", "shift", "smote"], default="none")
    s.add_argument("--folds", type=int, default=3)
    s.add_argument("--epochs", type=int, default=25)
    s.add_argument("--patience", type=int, default=3)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--filters", type=int, default=64)
    s.add_argument("--rho", type=float, default=0.1)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_train_clf)

    s = sub.add_parser("evaluate", help="metrics, confusion CSV and SVG from prediction files")
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--name")
    s.add_argument("--topk", type=int, nargs="*", default=[3, 5])
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("compare", help="Shapiro-Wilk routed paired test on fold accuracies")
    s.add_argument("--runs", nargs="+", required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("report", help="render tables, confusion SVGs and comparisons from a run record")
    s.add_argument("--run", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("run", help="full pipeline with stage caching")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int, help="classifier max epochs")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--backbone-epochs", type=int)
    s.add_argument("--method", choices=sorted(METHOD_ALIASES))
    s.set_defaults(fn=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("TRAJKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        args.fn(args)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    except (ValueError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
