import numpy as np
import pytest

from trajkit.pipeline import BackboneConfig, ExperimentConfig, GridCell, run_pipeline
from trajkit.synthetic import default_regimes, generate_synthetic, write_corpus
from trajkit.tinynet import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Two crime classes plus normal, 12 trajectories each, 36 frames."""
    root = tmp_path_factory.mktemp("corpus")
    trajs = generate_synthetic(default_regimes(2), 12, seed=3)
    for t in trajs:
        t.coords = t.coords[:36]
        t.frame_indices = t.frame_indices[:36]
    write_corpus(trajs, root)
    return root


def small_config(data, out, **kw):
    base = dict(seed=1, backbone=BackboneConfig(epochs=5),
                train=TrainConfig(max_epochs=4, batch_size=16),
                grid=[GridCell("MPED-C", "A3", "early-agg"), GridCell("decoded", "LSTM", None)],
                width=16, filters=16)
    base.update(kw)
    return ExperimentConfig(str(data), str(out), **base)


@pytest.fixture(scope="session")
def small_run(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = small_config(small_corpus, out)
    return config, run_pipeline(config)
