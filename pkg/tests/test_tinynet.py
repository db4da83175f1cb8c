import logging

import numpy as np
import pytest

from trajkit.classifiers import build_architecture
from trajkit.tinynet import (GRU, LSTM, AdamState, Conv1D, Dense, GlobalMaxPool, Network, ReLU, ShapeError,
                             Softmax, TrainConfig, TrainingError, adam_step, build_network, cross_entropy,
                             gradient_check, kfold_split, numeric_gradient, predict_proba, read_checkpoint,
                             train, write_checkpoint)
from trajkit.tinynet.layers import Whiten
from trajkit.tinynet.checkpoint import CheckpointError
from trajkit.tinynet.gradcheck import relative_error


class TransposedDense(Dense):
    """Dense with a deliberately wrong (transposed) weight gradient."""

    def backward(self, dout):
        x2 = self._cache.reshape(-1, self.in_dim)
        d2 = dout.reshape(-1, self.units)
        self.W.grad += (x2.T @ d2).T
        self.b.grad += d2.sum(axis=0)
        return dout @ self.W.value.T


def input_gradient_error(net, x, target):
    """Relative error of d(loss)/d(input) against central differences."""
    if np.asarray(target).dtype.kind in "iu":
        loss = lambda: cross_entropy(net.forward(x), target)[0]  # noqa: E731
        _, dout = cross_entropy(net.forward(x), target)
    else:
        loss = lambda: float((net.forward(x) * target).sum())  # noqa: E731
        net.forward(x)
        dout = target
    analytic = net.backward(dout)
    return float(relative_error(analytic, numeric_gradient(loss, x)).max())


def test_softmax_of_zero_logits():
    np.testing.assert_array_equal(Softmax().forward(np.zeros((1, 2))), [[0.5, 0.5]])


def test_dense_identity():
    d = Dense(3, 3, np.random.default_rng(0))
    d.W.value[...] = np.eye(3)
    x = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(d.forward(x), x)


def test_conv1d_all_ones_kernel():
    c = Conv1D(1, 1, 3, np.random.default_rng(0))
    c.W.value[...] = 1.0
    out = c.forward(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1))
    np.testing.assert_array_equal(out.ravel(), [6.0, 9.0])


def test_softmax_cross_entropy_gradient_identity(rng):
    z = rng.normal(size=(5, 4))
    y = np.array([0, 3, 1, 1, 2])
    sm = Softmax()
    p = sm.forward(z)
    _, dp = cross_entropy(p, y)
    dz = sm.backward(dp)
    onehot = np.eye(4)[y]
    np.testing.assert_allclose(dz, (p - onehot) / len(y), atol=1e-12)


def test_cross_entropy_bounds():
    loss, _ = cross_entropy(np.eye(3), np.arange(3))
    assert 0.0 <= loss < 1e-10
    loss, _ = cross_entropy(np.array([[0.0, 1.0]]), np.array([0]))
    assert np.isfinite(loss) and loss > 27


def test_zero_upstream_gradient_gives_zero_parameter_gradients(rng):
    net = build_architecture("A2", (6, 3), 4, width=5)
    net.forward(rng.normal(size=(2, 6, 3)))
    net.zero_grad()
    net.backward(np.zeros((2, 4)))
    assert all(not p.grad.any() for p in net.parameters())


def test_shape_error_names_layer():
    with pytest.raises(ShapeError, match="layer 1"):
        Network([Dense(4, 3, np.random.default_rng(0)), Dense(5, 2, np.random.default_rng(0))], (4,))
    net = build_network([{"kind": "dense", "in_dim": 4, "units": 2}], (4,), 0)
    with pytest.raises(ShapeError, match="layer 0"):
        net.forward(np.zeros((1, 5)))


@pytest.mark.parametrize("layer_fn,shape", [
    (lambda r: Dense(5, 3, r), (4, 5)),
    (lambda r: Conv1D(3, 4, 3, r), (2, 7, 3)),
    (lambda r: LSTM(3, 4, r), (2, 5, 3)),
    (lambda r: LSTM(3, 4, r, return_sequences=True), (2, 5, 3)),
    (lambda r: GRU(3, 4, r), (2, 5, 3)),
    (lambda r: GlobalMaxPool(), (2, 5, 3)),
    (lambda r: ReLU(), (3, 6)),
    (lambda r: Whiten(r.normal(size=4), r.normal(size=(4, 4))), (2, 3, 4)),
])
def test_layer_gradients(layer_fn, shape):
    rng = np.random.default_rng(1)
    layer = layer_fn(rng)
    net = Network([layer], shape[1:])
    x = rng.normal(size=shape)
    probe = rng.normal(size=(shape[0],) + net.output_shape)
    assert gradient_check(net, x, probe) < 1e-4
    assert input_gradient_error(net, x.copy(), probe) < 1e-4


def test_gru_initial_state_gradient(rng):
    gru = GRU(0, 4, rng)
    h0 = rng.normal(size=(3, 4))
    probe = rng.normal(size=(3, 5, 4))

    def loss():
        return float((gru.forward(np.zeros((3, 5, 0)), h0=h0) * probe).sum())

    gru.forward(np.zeros((3, 5, 0)), h0=h0)
    gru.backward(probe)
    assert relative_error(gru.dh0, numeric_gradient(loss, h0)).max() < 1e-4


def test_mutated_dense_is_caught():
    rng = np.random.default_rng(0)
    net = Network([TransposedDense(4, 4, rng), Softmax()], (4,))
    x = rng.normal(size=(6, 4))
    assert gradient_check(net, x, np.array([0, 1, 2, 3, 0, 1])) > 1e-2


def test_parameter_free_network_passes_vacuously():
    assert gradient_check(Network([ReLU()], (3,)), np.ones((2, 3)), np.ones((2, 3))) == 0.0


@pytest.mark.parametrize("arch", ["A1", "A2", "A3"])
def test_architecture_gradients(arch):
    rng = np.random.default_rng(2)
    net = build_architecture(arch, (12, 16), 5, seed=3, width=8, filters=8)
    x = rng.normal(size=(4, 12, 16))
    assert gradient_check(net, x, rng.integers(0, 5, size=4)) < 1e-4


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = np.zeros(3)
    adam_step([p], [np.array([0.5, -3.0, 1e-3])], AdamState(), lr=0.01)
    np.testing.assert_allclose(np.abs(p), 0.01, rtol=1e-4)


def test_adam_matches_scalar_recurrence():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    p = np.array([3.0])
    state = AdamState()
    x, m, v = 3.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2.0 * (x - 1.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        adam_step([p], [2.0 * (p - 1.0)], state, lr, b1, b2, eps)
        assert abs(p[0] - x) < 1e-12
    assert state.t == 10


def toy_net(seed=0):
    return build_network([{"kind": "dense", "in_dim": 2, "units": 8}, {"kind": "relu"},
                          {"kind": "dense", "in_dim": 8, "units": 2}, {"kind": "softmax"}], (2,), seed)


def toy_data():
    rng = np.random.default_rng(4)
    x = np.concatenate([rng.normal(-2.0, 0.4, size=(10, 2)), rng.normal(2.0, 0.4, size=(10, 2))])
    return x, np.repeat([0, 1], 10)


def test_separable_toy_set_reaches_full_accuracy():
    x, y = toy_data()
    net = toy_net()
    res = train(net, x, y, TrainConfig(learning_rate=0.05, max_epochs=25, batch_size=4, patience=25))
    assert res.epochs_run <= 25
    assert (predict_proba(net, x).argmax(axis=1) == y).mean() == 1.0


def test_plateau_stops_after_patience():
    x, y = toy_data()
    res = train(toy_net(), x, y, TrainConfig(learning_rate=0.0, patience=1, max_epochs=25))
    assert res.epochs_run == 2
    assert res.history[0]["train_loss"] == res.history[1]["train_loss"]


def test_training_is_deterministic():
    x, y = toy_data()
    cfg = TrainConfig(learning_rate=0.01, max_epochs=5, seed=3)
    a = train(toy_net(), x, y, cfg).history
    b = train(toy_net(), x, y, cfg).history
    assert a == b


def test_nan_loss_reports_epoch():
    x, y = toy_data()
    x = x.copy()
    x[:, 0] = np.nan
    net = build_network([{"kind": "dense", "in_dim": 2, "units": 2}, {"kind": "softmax"}], (2,), 0)
    with pytest.raises(TrainingError, match="epoch 1"):
        train(net, x, y, TrainConfig(max_epochs=3))


def test_best_weights_restored():
    x, y = toy_data()
    net = toy_net()
    res = train(net, x, y, TrainConfig(learning_rate=0.05, max_epochs=10))
    best = min(h["val_loss"] for h in res.history)
    assert res.history[res.best_epoch - 1]["val_loss"] == best


def test_kfold_partition():
    folds = kfold_split(9, 3, seed=0)
    assert [len(v) for _, v in folds] == [3, 3, 3]
    assert sorted(np.concatenate([v for _, v in folds]).tolist()) == list(range(9))
    for tr, va in folds:
        assert not set(tr) & set(va) and len(tr) + len(va) == 9


def test_kfold_stratified_and_deterministic():
    labels = np.repeat([0, 1, 2], 9)
    folds = kfold_split(27, 3, labels, seed=1)
    for _, va in folds:
        assert np.bincount(labels[va]).tolist() == [3, 3, 3]
    again = kfold_split(27, 3, labels, seed=1)
    assert all((a[1] == b[1]).all() for a, b in zip(folds, again))


def test_kfold_small_class_warns(caplog):
    with caplog.at_level(logging.WARNING):
        kfold_split(7, 3, [0, 0, 0, 0, 0, 1, 1], seed=0)
    assert "not stratified" in caplog.text


def test_checkpoint_round_trip(tmp_path, rng):
    w = [rng.normal(size=(3, 4)), rng.normal(size=5)]
    write_checkpoint(tmp_path / "m.tknn", b"TKNN", {"a": 1}, w)
    desc, back = read_checkpoint(tmp_path / "m.tknn", b"TKNN")
    assert desc == {"a": 1}
    for a, b in zip(w, back):
        np.testing.assert_array_equal(b, a.astype(np.float32))
    with pytest.raises(CheckpointError, match="bad magic"):
        read_checkpoint(tmp_path / "m.tknn", b"TKBB")


def test_whiten_round_trips_through_spec(rng):
    layer = Whiten(rng.normal(size=3), rng.normal(size=(3, 3)))
    net = build_network([layer.spec()], (5, 3), seed=0)
    x = rng.normal(size=(2, 5, 3))
    np.testing.assert_array_equal(net.forward(x), (x - layer.mean) @ layer.matrix)
    assert net.parameters() == []
