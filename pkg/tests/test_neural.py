import math

import numpy as np
import pytest

from reidlab.errors import ShapeError, TrainingError, UsageError
from reidlab.neural import (Gradients, MlpNetwork, MlpSpec, TrainConfig, accuracy, backward,
                            extract_deep_features, forward, init_network, init_velocity,
                            load_network, momentum_update, save_network, sgd_momentum_step,
                            softmax, softmax_cross_entropy, train_classifier)


def test_width_multiplier_scaling():
    spec = MlpSpec(10, (256, 128), 5, width_multiplier=0.25)
    assert spec.effective_widths == (64, 32)
    assert MlpSpec(10, (30, 3), 5, width_multiplier=0.1).effective_widths == (3, 1)
    assert spec.layer_shapes == [(10, 64), (64, 32), (32, 5)]


def test_parameter_count_increasing_in_alpha():
    counts = [MlpSpec(64, (1024, 512), 20, a).parameter_count for a in (0.25, 0.5, 0.75, 1.0)]
    assert counts == sorted(counts) and len(set(counts)) == 4
    spec = MlpSpec(3, (4,), 2)
    assert spec.parameter_count == 3 * 4 + 4 + 4 * 2 + 2


def test_init_biases_zero_and_deterministic():
    spec = MlpSpec(8, (16, 8), 3)
    a, b = init_network(spec, 5), init_network(spec, 5)
    assert all(np.all(bias == 0) for bias in a.biases)
    assert a.equals(b)
    assert not a.equals(init_network(spec, 6))


def test_init_he_variance():
    net = init_network(MlpSpec(100, (100,), 2), seed=0)
    w = net.weights[0]
    assert w.size == 10_000
    assert abs(w.var() / (2 / 100) - 1) < 0.2


def test_forward_zero_weights():
    spec = MlpSpec(4, (6,), 3)
    net = MlpNetwork(spec, [np.zeros((4, 6)), np.zeros((6, 3))], [np.zeros(6), np.zeros(3)])
    logits, _ = forward(net, np.ones((2, 4)))
    np.testing.assert_array_equal(logits, 0.0)


def test_forward_single_linear_layer_identity():
    spec = MlpSpec(3, (), 3)
    net = MlpNetwork(spec, [np.eye(3)], [np.zeros(3)])
    x = np.array([[-1.0, 2.0, 0.5]])
    np.testing.assert_array_equal(forward(net, x)[0], x)


def test_forward_matches_hand_rolled():
    rng = np.random.default_rng(0)
    spec = MlpSpec(5, (4,), 3)
    net = init_network(spec, 1)
    net.biases[0][:] = rng.normal(size=4)
    net.biases[1][:] = rng.normal(size=3)
    x = rng.normal(size=5)
    w1, b1, w2, b2 = net.weights[0], net.biases[0], net.weights[1], net.biases[1]
    hidden = [max(0.0, sum(x[i] * w1[i, j] for i in range(5)) + b1[j]) for j in range(4)]
    logits = [sum(hidden[j] * w2[j, k] for j in range(4)) + b2[k] for k in range(3)]
    np.testing.assert_allclose(forward(net, x)[0], logits, rtol=1e-12)
    with pytest.raises(ShapeError):
        forward(net, np.zeros(4))


def test_softmax_cross_entropy_values():
    loss, grad = softmax_cross_entropy(np.zeros(7), 3)
    assert loss == pytest.approx(math.log(7))
    loss, grad = softmax_cross_entropy(np.array([1e6, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12) and np.all(np.isfinite(grad))
    loss, grad = softmax_cross_entropy(np.array([1.0, 2.0, 3.0]), 2)
    expected = -math.log(math.e ** 3 / (math.e + math.e ** 2 + math.e ** 3))
    assert loss == pytest.approx(expected, rel=1e-12)
    assert loss == pytest.approx(0.40761, abs=1e-5)
    np.testing.assert_allclose(grad, softmax(np.array([1.0, 2.0, 3.0])) - [0, 0, 1], atol=1e-15)


def batch_loss(net, X, y):
    return softmax_cross_entropy(forward(net, X)[0], y)[0]


def relative_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))


def finite_difference(net, X, y, h=1e-5):
    grads = []
    for p in net.parameters:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            plus = batch_loss(net, X, y)
            p[idx] = orig - h
            minus = batch_loss(net, X, y)
            p[idx] = orig
            g[idx] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


@pytest.mark.parametrize("draw", range(20))
def test_backward_matches_finite_differences(draw):
    rng = np.random.default_rng(draw)
    spec = MlpSpec(4, (5, 4), 3)
    net = init_network(spec, draw)
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    X = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    logits, cache = forward(net, X)
    analytic = backward(net, cache, softmax_cross_entropy(logits, y)[1]).parameters
    numeric = finite_difference(net, X, y)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) <= 1e-4


def test_backward_zero_upstream():
    net = init_network(MlpSpec(3, (4,), 2), 0)
    _, cache = forward(net, np.ones((2, 3)))
    grads = backward(net, cache, np.zeros((2, 2)))
    assert all(np.all(g == 0) for g in grads.parameters)


def test_batch_gradient_is_mean_of_examples():
    rng = np.random.default_rng(3)
    net = init_network(MlpSpec(4, (6,), 3), 3)
    X = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    logits, cache = forward(net, X)
    batch = backward(net, cache, softmax_cross_entropy(logits, y)[1]).parameters
    singles = []
    for i in range(5):
        lg, c = forward(net, X[i:i + 1])
        singles.append(backward(net, c, softmax_cross_entropy(lg, y[i:i + 1])[1]).parameters)
    for k, g in enumerate(batch):
        np.testing.assert_allclose(g, np.mean([s[k] for s in singles], axis=0), atol=1e-14)


def test_backward_rejects_stale_cache():
    net = init_network(MlpSpec(3, (4,), 2), 0)
    logits, cache = forward(net, np.ones((1, 3)))
    grads = backward(net, cache, np.ones((1, 2)))
    sgd_momentum_step(net, grads, init_velocity(net), TrainConfig(), 0)
    with pytest.raises(UsageError):
        backward(net, cache, np.ones((1, 2)))
    other = init_network(MlpSpec(3, (4,), 2), 0)
    _, other_cache = forward(other, np.ones((1, 3)))
    with pytest.raises(UsageError):
        backward(net, other_cache, np.ones((1, 2)))


def test_momentum_scalar():
    theta, v = np.zeros(()), np.zeros(())
    momentum_update([theta], [np.ones(())], [v], lr=0.1, momentum=0.0)
    assert theta == pytest.approx(-0.1)


def test_momentum_two_steps_unrolled():
    theta, v = np.zeros(()), np.zeros(())
    lr, g1, g2 = 0.05, 2.0, -0.7
    momentum_update([theta], [np.array(g1)], [v], lr, 0.9)
    momentum_update([theta], [np.array(g2)], [v], lr, 0.9)
    assert float(theta) == pytest.approx(-lr * g1 * 1.9 - lr * g2, rel=1e-12)


def test_learning_rate_schedule():
    cfg = TrainConfig(learning_rate=0.02, decay_every_steps=20000)
    assert cfg.lr_at(0) == cfg.lr_at(19999) == 0.02
    assert cfg.lr_at(20000) == pytest.approx(0.002, rel=1e-15)
    assert cfg.lr_at(40000) == pytest.approx(0.0002, rel=1e-12)


def test_sgd_step_uses_schedule():
    net = init_network(MlpSpec(2, (), 2), 0)
    before = net.weights[0].copy()
    grads = Gradients([np.ones((2, 2))], [np.zeros(2)])
    cfg = TrainConfig(learning_rate=1.0, decay_every_steps=10, momentum=0.0)
    sgd_momentum_step(net, grads, init_velocity(net), cfg, step=10)
    np.testing.assert_allclose(net.weights[0], before - 0.1, atol=1e-15)


def blobs(seed, n_per=60, dim=4, sigma=0.5):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0, 0, 0], [4, 0, 0, 0], [0, 4, 0, 0]], dtype=float)[:, :dim] * sigma * 2
    y = np.repeat(np.arange(3), n_per)
    X = centers[y] + rng.normal(scale=sigma, size=(len(y), dim))
    return X, y, centers


def nearest_centroid_accuracy(X, y, centers):
    d = ((X[:, None, :] - centers[None]) ** 2).sum(-1)
    return np.mean(d.argmin(1) == y)


def test_train_separable_blobs():
    X, y, centers = blobs(0)
    assert nearest_centroid_accuracy(X, y, centers) >= 0.99
    spec = MlpSpec(4, (16,), 3)
    net, log = train_classifier(spec, X, y, TrainConfig(learning_rate=0.05, batch_size=16,
                                                        epochs=50, seed=0))
    assert accuracy(net, X, y) >= 0.99
    assert log.epoch_accuracy[-1] >= 0.99
    assert log.steps == 50 * math.ceil(len(X) / 16) == len(log.lr_trace)


@pytest.mark.parametrize("seed", range(10))
def test_loss_decreases_over_training(seed):
    X, y, _ = blobs(seed)
    _, log = train_classifier(MlpSpec(4, (16,), 3), X, y,
                              TrainConfig(learning_rate=0.05, batch_size=16, epochs=20, seed=seed))
    assert log.epoch_loss[-1] <= log.epoch_loss[0]


def test_zero_epochs_returns_init():
    X, y, _ = blobs(1)
    spec = MlpSpec(4, (8,), 3)
    net, log = train_classifier(spec, X, y, TrainConfig(epochs=0, seed=4))
    assert net.equals(init_network(spec, 4))
    assert log.steps == 0


def test_training_deterministic():
    X, y, _ = blobs(2)
    spec = MlpSpec(4, (8, 8), 3)
    cfg = TrainConfig(learning_rate=0.05, batch_size=7, epochs=5, seed=9)
    a, _ = train_classifier(spec, X, y, cfg)
    b, _ = train_classifier(spec, X, y, cfg)
    assert a.equals(b)


def test_training_errors():
    spec = MlpSpec(4, (8,), 3)
    with pytest.raises(TrainingError):
        train_classifier(spec, np.zeros((0, 4)), np.zeros(0, dtype=int), TrainConfig())
    with pytest.raises(TrainingError):
        train_classifier(spec, np.zeros((2, 4)), [0, 3], TrainConfig())


def test_deep_features():
    spec = MlpSpec(6, (32, 16), 4)
    half = MlpSpec(6, (32, 16), 4, width_multiplier=0.5)
    assert half.feature_dim == spec.feature_dim // 2
    net = init_network(spec, 0)
    X = np.random.default_rng(0).normal(size=(10, 6))
    f = extract_deep_features(net, X)
    assert f.shape == (10, 16) and np.all(f >= 0)
    np.testing.assert_array_equal(np.vstack([extract_deep_features(net, X[:5]),
                                             extract_deep_features(net, X[5:])]), f)


def test_network_json_roundtrip(tmp_path):
    X, y, _ = blobs(3)
    net, _ = train_classifier(MlpSpec(4, (8, 6), 3, 0.5), X, y, TrainConfig(epochs=2, seed=1))
    save_network(net, tmp_path / "n.json")
    back = load_network(tmp_path / "n.json")
    assert back.equals(net) and back.steps == net.steps and back.seed == 1
