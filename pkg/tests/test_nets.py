import numpy as np
import pytest

from pegmentor import nets


def finite_difference_grads(p, x, upstream, h=1e-5):
    """Independent oracle: central differences of sum(output * upstream)."""
    def loss():
        return float(np.dot(nets.mlp_forward(p, x), upstream))
    grads = []
    for layer in p.layers:
        g = nets.Layer(np.zeros_like(layer.weights), np.zeros_like(layer.bias))
        for arr, out in ((layer.weights, g.weights), (layer.bias, g.bias)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                f1 = loss()
                arr[idx] = old - h
                f2 = loss()
                arr[idx] = old
                out[idx] = (f1 - f2) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(a, b):
    return np.max(np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-8))


def test_forward_zero_weights():
    p = nets.MlpParams([nets.Layer(np.zeros((3, 4)), np.zeros(3))], ["linear"])
    assert np.array_equal(nets.mlp_forward(p, np.ones(4)), np.zeros(3))


def test_forward_identity_layer():
    p = nets.MlpParams([nets.Layer(np.eye(5), np.zeros(5))], ["linear"])
    x = np.arange(5.0)
    assert np.array_equal(nets.mlp_forward(p, x), x)


def test_forward_matches_manual_chain():
    rng = np.random.default_rng(3)
    p = nets.mlp_create([4, 8, 2], ["relu", "tanh"], rng)
    x = rng.normal(size=4)
    h = np.maximum(p.layers[0].weights @ x + p.layers[0].bias, 0.0)
    expect = np.tanh(p.layers[1].weights @ h + p.layers[1].bias)
    assert np.allclose(nets.mlp_forward(p, x), expect, atol=1e-12)


def test_forward_shape_mismatch():
    rng = np.random.default_rng(0)
    p = nets.mlp_create([4, 8, 2], ["relu", "tanh"], rng)
    with pytest.raises(nets.ShapeMismatch):
        nets.mlp_forward(p, np.ones(5))
    with pytest.raises(nets.ShapeMismatch):
        nets.mlp_gradients(p, np.ones(4), np.ones(3))


def test_gradients_zero_upstream():
    rng = np.random.default_rng(1)
    p = nets.mlp_create([4, 8, 2], ["relu", "tanh"], rng)
    grads, xg = nets.mlp_gradients(p, rng.normal(size=4), np.zeros(2))
    assert all(np.all(g.weights == 0) and np.all(g.bias == 0) for g in grads)
    assert np.all(xg == 0)


def test_gradients_match_finite_differences_actor_shape():
    rng = np.random.default_rng(7)
    p = nets.mlp_create([11, 64, 64, 5], ["relu", "relu", "tanh"], rng)
    x = rng.normal(size=11)
    up = rng.normal(size=5)
    grads, _ = nets.mlp_gradients(p, x, up)
    fd = finite_difference_grads(p, x, up)
    worst = max(max_rel_error(g.weights, f.weights) for g, f in zip(grads, fd))
    worst = max(worst, max(max_rel_error(g.bias, f.bias) for g, f in zip(grads, fd)))
    assert worst < 1e-4


def test_gradients_match_finite_differences_critic_shape():
    rng = np.random.default_rng(11)
    p = nets.mlp_create([19, 64, 64, 1], ["relu", "relu", "linear"], rng)
    x = rng.normal(size=19)
    up = np.array([1.0])
    grads, _ = nets.mlp_gradients(p, x, up)
    fd = finite_difference_grads(p, x, up)
    worst = max(max_rel_error(g.weights, f.weights) for g, f in zip(grads, fd))
    assert worst < 1e-4


def test_gradients_linear_in_upstream():
    rng = np.random.default_rng(5)
    p = nets.mlp_create([6, 16, 3], ["relu", "tanh"], rng)
    x = rng.normal(size=6)
    up = rng.normal(size=3)
    g1, _ = nets.mlp_gradients(p, x, up)
    g3, _ = nets.mlp_gradients(p, x, 3.0 * up)
    for a, b in zip(g1, g3):
        assert np.allclose(3.0 * a.weights, b.weights, atol=1e-12)
        assert np.allclose(3.0 * a.bias, b.bias, atol=1e-12)


def test_batched_forward_matches_loop():
    rng = np.random.default_rng(9)
    p = nets.mlp_create([6, 16, 3], ["relu", "tanh"], rng)
    xs = rng.normal(size=(10, 6))
    batched = nets.mlp_forward(p, xs)
    for i in range(10):
        assert np.allclose(batched[i], nets.mlp_forward(p, xs[i]), atol=1e-12)


def test_adam_reduces_quadratic():
    opt = nets.Adam(lr=0.1)
    x = np.array([5.0, -3.0])
    for _ in range(200):
        opt.step([x], [2.0 * x])
    assert np.linalg.norm(x) < 0.1


def test_running_norm():
    rng = np.random.default_rng(2)
    n = nets.RunningNorm(3)
    data = rng.normal(loc=[1.0, -2.0, 0.5], scale=[0.5, 2.0, 1.0], size=(5000, 3))
    n.update(data)
    assert np.allclose(n.mean, data.mean(axis=0), atol=1e-9)
    assert np.allclose(n.std, data.std(axis=0), rtol=1e-3)
    z = n.normalize(data[:100])
    assert np.all(np.abs(z) <= 5.0)
    # constant feature: floored std, no blow-up
    c = nets.RunningNorm(1)
    c.update(np.ones((10, 1)))
    assert c.std[0] == pytest.approx(c.std_floor)
    assert np.isfinite(c.normalize(np.array([2.0]))).all()
