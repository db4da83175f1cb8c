from dataclasses import replace

import numpy as np
import pytest

from trajkit.backbone import BackboneModel, train_backbone
from trajkit.classifiers import (ClassifierModel, EarlyFusionModel, FusionSpec, LabelingMissingError,
                                 Prediction, build_architecture, fuse_early, fuse_late, make_classifier,
                                 predict, select_trajectories, train_decoded, train_encoded,
                                 trajectory_votes)
from trajkit.groundtruth import ABNORMAL, relabel_trajectories
from trajkit.synthetic import default_regimes, generate_synthetic
from trajkit.tinynet import TrainConfig, gradient_check
from trajkit.tinynet.layers import ShapeError
from trajkit.trajectory import NORMAL, segment_all


@pytest.fixture(scope="module")
def corpus():
    trajs = generate_synthetic(default_regimes(2), 6, seed=0)
    for t in trajs:
        t.coords, t.frame_indices = t.coords[:24], t.frame_indices[:24]
    clusters = [NORMAL if t.class_label == NORMAL else ABNORMAL for t in trajs]
    labeling = relabel_trajectories(trajs, clusters, "unsupervised", scores=[0.0] * len(trajs))
    normals = segment_all([t for t in trajs if t.class_label == NORMAL])
    backbone = train_backbone(normals, epochs=20, seed=0, hidden=8)
    return trajs, labeling, backbone


def test_architecture_shapes(rng):
    net = build_architecture("A3", (12, 16), 13)
    p = net.forward(rng.normal(size=(3, 12, 16)))
    assert p.shape == (3, 13)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert build_architecture("A3", (12, 16), 13, head="trunk").output_shape == (64,)
    for arch in ("A1", "A2"):
        assert build_architecture(arch, (12, 16), 4).output_shape == (4,)
        with pytest.raises(ValueError, match="trunk"):
            build_architecture(arch, (12, 16), 4, head="trunk")


def test_fuse_early_examples(rng):
    z_l, z_g = rng.normal(size=(12, 16)), rng.normal(size=(12, 16))
    spec = FusionSpec("early-agg", np.ones(16), np.zeros(16))
    assert np.array_equal(fuse_early(z_l, z_g, spec), z_l)
    np.testing.assert_array_equal(fuse_early(z_l, z_l, FusionSpec.aggregate(16)), z_l)
    assert fuse_early(z_l, z_g, FusionSpec("early-cat")).shape == (12, 32)
    with pytest.raises(ShapeError):
        fuse_early(z_l, z_g[:, :8], FusionSpec.aggregate(16))


def test_fuse_late_examples(rng):
    u = np.full(4, 0.25)
    np.testing.assert_array_equal(fuse_late(u, u), u)
    e = np.eye(4)[2]
    np.testing.assert_array_equal(fuse_late(e, e), e)
    np.testing.assert_allclose(fuse_late([0.7, 0.3], [0.5, 0.5]), [0.6, 0.4], atol=1e-15)
    p, q = rng.dirichlet(np.ones(5), size=2)
    perm = rng.permutation(5)
    np.testing.assert_allclose(fuse_late(p[perm], q[perm]), fuse_late(p, q)[perm], atol=1e-15)


@pytest.mark.parametrize("mode", ["early-agg", "early-cat"])
def test_early_fusion_gradients(mode, rng):
    model = EarlyFusionModel((12, 6), 3, mode, seed=1, width=8, filters=5)
    x = (rng.normal(size=(4, 12, 6)), rng.normal(size=(4, 12, 6)))
    assert gradient_check(model, x, rng.integers(0, 3, size=4)) < 1e-4


def test_fusion_weights_receive_gradient(rng):
    model = EarlyFusionModel((12, 6), 3, "early-agg", seed=1, width=8, filters=5)
    x = (rng.normal(size=(4, 12, 6)), rng.normal(size=(4, 12, 6)))
    for p in model.parameters():
        p.grad[...] = 0.0
    model.forward(x)
    model.backward(rng.normal(size=(4, 3)))
    assert np.abs(model.w_l.grad).sum() > 0 or np.abs(model.w_g.grad).sum() > 0


def test_select_trajectories(corpus):
    trajs, labeling, _ = corpus
    crime = select_trajectories(trajs, labeling, "MPED-C")
    assert {t.class_label for t in crime} == {"Fighting", "RoadAccidents"}
    nc = select_trajectories(trajs, labeling, "MPED-NC")
    assert sum(t.class_label == NORMAL for t in nc) == 6
    with pytest.raises(LabelingMissingError, match="make-labels"):
        select_trajectories(trajs, None, "MPED-C")


def test_mped_c_refuses_normal_only(corpus):
    trajs, labeling, backbone = corpus
    normal = [t for t in trajs if t.class_label == NORMAL]
    with pytest.raises(ValueError, match="no trajectories|normal-only"):
        train_encoded(backbone, normal, labeling, "A3", "early-agg", "MPED-C", TrainConfig(max_epochs=1))


@pytest.mark.parametrize("arch,fusion", [("A3", "early-agg"), ("A1", "late"), ("A3", "early-cat")])
def test_encoder_frozen_during_training(corpus, arch, fusion):
    trajs, labeling, backbone = corpus
    before = backbone.encoder_checksum()
    model = train_encoded(backbone, trajs, labeling, arch, fusion, "MPED-C",
                          TrainConfig(max_epochs=2, batch_size=8), width=8, filters=8)
    assert backbone.encoder_checksum() == before
    assert model.classes == ["Fighting", "RoadAccidents"]


def test_decoded_overfits_ten_segments():
    # limb swing against whole-body bob; reconstructions of closer motion types can
    # differ only along directions far below the main spread
    trajs = generate_synthetic(default_regimes(5), 6, seed=0)
    clusters = [NORMAL if t.class_label == NORMAL else ABNORMAL for t in trajs]
    labeling = relabel_trajectories(trajs, clusters, "unsupervised", scores=[0.0] * len(trajs))
    backbone = train_backbone(segment_all([t for t in trajs if t.class_label == NORMAL]), epochs=30, seed=0)
    crime = [replace(t, coords=t.coords[:12], frame_indices=t.frame_indices[:12])
             for c in ("Fighting", "Arson") for t in [u for u in trajs if u.class_label == c][:5]]
    segs = segment_all(crime)
    assert len(segs) == 10
    model = train_decoded(backbone, crime, labeling,
                          TrainConfig(learning_rate=0.003, max_epochs=25, batch_size=2, patience=25),
                          val_trajs=crime)
    assert len(model.history) <= 25
    pred = predict(model, backbone, segs)
    assert np.mean([p == t for p, t in zip(pred.predicted, pred.true)]) == 1.0
    assert model.input_stats is not None


def test_decoded_refuses_normal_classes(corpus):
    trajs, labeling, backbone = corpus
    with pytest.raises(ValueError, match="crime classes only"):
        train_decoded(backbone, trajs, labeling, TrainConfig(max_epochs=1), classes=["Fighting", NORMAL])


def test_predict_and_checkpoint(corpus, tmp_path):
    trajs, labeling, backbone = corpus
    model = train_encoded(backbone, trajs, labeling, "A3", "early-agg", "MPED-NC",
                          TrainConfig(max_epochs=1, batch_size=8), width=8, filters=8)
    assert model.classes[-1] == NORMAL
    segs = segment_all(trajs[:3])
    a = predict(model, backbone, segs)
    model.save(tmp_path / "m.tknn")
    back = ClassifierModel.load(tmp_path / "m.tknn")
    b = predict(back, backbone, segs)
    np.testing.assert_array_equal(a.probabilities, b.probabilities)
    other = BackboneModel(hidden=8, seed=99)
    with pytest.raises(ValueError, match="trained on backbone"):
        predict(model, other, segs)


def test_trajectory_votes():
    classes = ["A", "B"]
    refs = [("v", "1", 0)]
    assert trajectory_votes(refs, np.array([[0.3, 0.7]]), classes) == {("v", "1"): "B"}
    refs = [("v", "1", 0), ("v", "1", 12), ("v", "1", 24)]
    p = np.array([[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]])
    assert trajectory_votes(refs, p, classes)[("v", "1")] == "A"
    p = np.array([[0.51, 0.49], [0.1, 0.9]])
    assert trajectory_votes(refs[:2], p, classes)[("v", "1")] == "B"
    pred = Prediction(refs[:2], p, ["A", "B"], classes)
    assert pred.trajectory_votes() == {("v", "1"): "B"}


def test_make_classifier_rejects_bad_combinations():
    with pytest.raises(ValueError):
        make_classifier("MPED-X", "A3", "late", ["A", "B"], "x", 16)
    with pytest.raises(ValueError, match="A3"):
        make_classifier("MPED-C", "A1", "early-agg", ["A", "B"], "x", 16)


def test_input_statistics_whiten(rng):
    from trajkit.classifiers import input_statistics
    mix = rng.normal(size=(34, 34))
    x = 0.5 + (rng.normal(size=(200, 12, 34)) * np.geomspace(1, 1e-2, 34)) @ mix
    st = input_statistics(x)
    z = (x.reshape(-1, 34) - np.array(st["mean"])) @ np.array(st["matrix"])
    np.testing.assert_allclose(np.cov(z, rowvar=False), np.eye(34), atol=1e-3)
