from collections import Counter

import numpy as np
import pytest

from trajkit.synthetic import MotionRegime, default_regimes, generate_synthetic, write_corpus
from trajkit.trajectory import DatasetManifest, load_manifest_trajectories


def test_counts_per_label():
    regs = [MotionRegime("a"), MotionRegime("b", drift=(0.001, 0.0))]
    out = generate_synthetic(regs, 5, seed=0)
    assert Counter(t.class_label for t in out) == {"a": 5, "b": 5}
    assert len({t.key for t in out}) == 10


def test_bad_arguments():
    with pytest.raises(ValueError):
        generate_synthetic([MotionRegime("a")], 0, seed=0)
    with pytest.raises(ValueError):
        generate_synthetic([MotionRegime("a"), MotionRegime("a")], 1, seed=0)
    with pytest.raises(ValueError):
        default_regimes(0)


def test_drift_displacement():
    reg = MotionRegime("walk", drift=(0.01, 0.0), height_spread=0.01)
    for t in generate_synthetic([reg], 4, seed=2):
        step = np.diff(t.coords, axis=0)
        np.testing.assert_allclose(step[:, 0::2].mean(axis=0), 0.01, rtol=0, atol=1e-9)
        np.testing.assert_allclose(step[:, 1::2], 0.0, atol=1e-9)


def test_zero_jitter_is_periodic():
    reg = MotionRegime("swing", swing_amplitude=0.05, swing_frequency=0.25)
    t = generate_synthetic([reg], 1, seed=0)[0]
    # period of 4 frames
    np.testing.assert_allclose(t.coords[4:], t.coords[:-4], atol=1e-12)


def test_deterministic_and_in_frame():
    a = generate_synthetic(default_regimes(5), 3, seed=9)
    b = generate_synthetic(default_regimes(5), 3, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.coords, y.coords)
    assert all(t.coords.min() >= 0.0 and t.coords.max() <= 1.0 for t in a)


def test_write_corpus_round_trip(tmp_path):
    trajs = generate_synthetic(default_regimes(2), 5, seed=1)
    write_corpus(trajs, tmp_path)
    m = DatasetManifest.load(tmp_path / "manifest.json")
    assert len(m.entries) == 15
    assert len(m.split_entries("train")) == 12
    back = {t.key: t for t in load_manifest_trajectories(m)}
    for t in trajs:
        np.testing.assert_allclose(back[t.key].coords, t.coords, rtol=0, atol=1e-15)
        assert back[t.key].class_label == t.class_label
