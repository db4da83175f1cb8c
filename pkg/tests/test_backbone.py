import numpy as np
import pytest

from trajkit.backbone import BackboneModel, encode, mse, reconstruct, train_backbone
from trajkit.synthetic import MotionRegime, default_regimes, generate_synthetic
from trajkit.tinynet.gradcheck import numeric_gradient, relative_error
from trajkit.tinynet.layers import sigmoid
from trajkit.tinynet.checkpoint import quantize
from trajkit.trajectory import segment_all, stack_segments


def constant_segments(n, seed=0):
    """Motionless generator output: each segment holds one pose for all 12 frames."""
    reg = MotionRegime("normal", height_spread=0.02, n_frames=12)
    return segment_all(generate_synthetic([reg], n, seed))


def normal_segments(n_traj=6, seed=0):
    trajs = generate_synthetic(default_regimes(1)[:1], n_traj, seed)
    return segment_all(trajs)


def test_constant_segments_are_learned():
    segs = constant_segments(200)
    assert all(np.ptp(s.raw, axis=0).max() == 0 for s in segs)
    model = train_backbone(segs, epochs=50, seed=0)
    assert model.final_loss < 1e-3
    assert len(model.history) == 51


def test_zero_epochs_is_initialization_baseline():
    segs = constant_segments(20)
    model = train_backbone(segs, epochs=0, seed=4)
    fresh = BackboneModel(seed=4)
    raw, local, glob = stack_segments(segs)
    assert model.history == [mse(fresh.reconstruct_batch(local, glob), raw)]
    # the returned weights are the initial ones rounded to float32
    fresh.set_weights(quantize(fresh.get_weights()))
    assert model.final_loss == mse(fresh.reconstruct_batch(local, glob), raw)
    assert abs(model.final_loss - model.history[0]) < 1e-6


def test_training_is_deterministic():
    segs = normal_segments(3)
    a = train_backbone(segs, epochs=3, seed=7)
    b = train_backbone(segs, epochs=3, seed=7)
    assert a.history == b.history
    for x, y in zip(a.get_weights(), b.get_weights()):
        np.testing.assert_array_equal(x, y)


def test_rejects_non_normal_and_empty():
    segs = normal_segments(2)
    segs[0].class_label = "Arson"
    with pytest.raises(ValueError, match="normal segments only"):
        train_backbone(segs, epochs=1, seed=0)
    with pytest.raises(ValueError):
        train_backbone([], epochs=1, seed=0)


def test_identical_segments_identical_latents():
    model = BackboneModel(seed=1)
    seg = normal_segments(1)[0]
    a, b = encode(model, seg), encode(model, seg)
    np.testing.assert_array_equal(a.z_l, b.z_l)
    np.testing.assert_array_equal(a.z_g, b.z_g)
    assert a.z_l.shape == (12, 16) and a.z_g.shape == (12, 16)


def gru_bias_only(b, U, T):
    """Hidden states of a GRU fed zeros from a zero state, by explicit recursion."""
    H = U.shape[0]
    h = np.zeros(H)
    out = []
    for _ in range(T):
        z = sigmoid(b[:H] + h @ U[:, :H])
        r = sigmoid(b[H:2 * H] + h @ U[:, H:2 * H])
        n = np.tanh(b[2 * H:] + (r * h) @ U[:, 2 * H:])
        h = (1 - z) * n + z * h
        out.append(h)
    return np.array(out)


def test_zero_input_hidden_states_come_from_biases():
    model = BackboneModel(seed=2)
    rng = np.random.default_rng(0)
    for gru in (model.local_encoder, model.global_encoder):
        gru.b.value[...] = rng.normal(size=gru.b.value.shape)
    z_l, z_g = model.encode_batch(np.zeros((1, 12, 34)), np.zeros((1, 12, 4)))
    np.testing.assert_allclose(z_l[0], gru_bias_only(model.local_encoder.b.value, model.local_encoder.U.value, 12),
                               atol=1e-14)
    np.testing.assert_allclose(z_g[0], gru_bias_only(model.global_encoder.b.value,
                                                     model.global_encoder.U.value, 12), atol=1e-14)


def test_overfit_single_segment():
    seg = normal_segments(1)[0]
    model = train_backbone([seg], epochs=300, seed=0, learning_rate=1e-2)
    rec = reconstruct(model, seg)
    assert mse(seg.raw, rec.raw_hat) < 1e-3


def test_untrained_reconstruction_shape_and_determinism():
    model = BackboneModel(seed=3)
    seg = normal_segments(1)[0]
    a, b = reconstruct(model, seg), reconstruct(model, seg)
    assert a.raw_hat.shape == (12, 34) and np.all(np.isfinite(a.raw_hat))
    np.testing.assert_array_equal(a.raw_hat, b.raw_hat)
    assert a.segment_ref == seg.trajectory_ref


def test_backbone_gradient():
    rng = np.random.default_rng(5)
    model = BackboneModel(hidden=4, seed=5)
    for p in model.parameters():
        p.value[...] = rng.normal(scale=0.3, size=p.value.shape)
    segs = normal_segments(1)[:3]
    raw, local, glob = stack_segments(segs)
    target = model.forward(local, glob) + 0.01 * rng.normal(size=raw.shape)

    def loss():
        return 0.5 * float(((model.forward(local, glob) - target) ** 2).sum())

    for p in model.parameters():
        p.grad[...] = 0.0
    model.backward(model.forward(local, glob) - target)
    analytic = [p.grad.copy() for p in model.parameters()]
    for p, a in zip(model.parameters(), analytic):
        if p.value.size == 0:
            continue
        assert relative_error(a, numeric_gradient(loss, p.value)).max() < 1e-4, p.name


def test_training_reduces_loss_on_synthetic_normals():
    model = train_backbone(normal_segments(8), epochs=10, seed=0)
    assert model.history[-1] <= 0.9 * model.history[0]


def test_save_load_round_trip(tmp_path):
    model = train_backbone(normal_segments(2), epochs=1, seed=0)
    model.save(tmp_path / "b.tkbb", meta={"config_hash": "abc"})
    back = BackboneModel.load(tmp_path / "b.tkbb")
    assert back.fingerprint() == model.fingerprint()
    for x, y in zip(model.get_weights(), back.get_weights()):
        np.testing.assert_array_equal(x, y)
    assert (tmp_path / "b.tkbb").read_bytes()[:4] == b"TKBB"
