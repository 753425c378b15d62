"""Tests for the hand-written MLP, Adam and checkpoint container."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wurl.errors import CheckpointError, StateError
from wurl.nn import (Adam, Mlp, load_checkpoint, numerical_gradient, param_hash, relative_error,
                     save_checkpoint)


def test_zero_network_outputs_zero():
    net = Mlp([3, 5, 2], init="zeros")
    np.testing.assert_array_equal(net.forward([1.0, -2.0, 3.0]), np.zeros(2))


def test_affine_one_by_one():
    net = Mlp([1, 1], init="zeros")
    net.weights[0][...] = 2.0
    net.biases[0][...] = 1.0
    np.testing.assert_array_equal(net.forward([3.0]), [7.0])


def test_rectifier_clips_negative_preactivation():
    net = Mlp([1, 1, 1], init="zeros")
    net.weights[0][...] = -1.0
    net.weights[1][...] = 1.0
    assert net.forward([5.0])[0] == 0.0


def test_tanh_head_bounded():
    net = Mlp([2, 8, 3], head="tanh", rng=np.random.default_rng(0))
    out = net.forward(np.random.default_rng(1).normal(size=(50, 2)) * 100)
    assert np.all(np.abs(out) <= 1.0)


def test_forward_shape_errors():
    net = Mlp([3, 4, 1])
    with pytest.raises(ValueError):
        net.forward(np.zeros(2))
    with pytest.raises(ValueError):
        Mlp([3])
    with pytest.raises(ValueError):
        Mlp([3, 1], head="softplus")


def test_backward_requires_forward():
    net = Mlp([2, 3, 1])
    with pytest.raises(StateError):
        net.backward(np.ones((1, 1)))
    net.forward(np.zeros(2))
    net.backward(np.ones((1, 1)))
    with pytest.raises(StateError):
        net.backward(np.ones((1, 1)))


def test_zero_output_gradient_gives_zero_grads():
    net = Mlp([3, 6, 2], rng=np.random.default_rng(0))
    net.forward(np.ones((4, 3)))
    grads, gx = net.backward(np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(gx == 0)


def test_affine_derivative():
    net = Mlp([1, 1], init="zeros")
    net.forward([3.0])
    grads, _ = net.backward([1.0])
    assert grads[0][0, 0] == 3.0 and grads[1][0] == 1.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["linear", "tanh"]))
def test_gradients_match_finite_differences(seed, head):
    rng = np.random.default_rng(seed)
    net = Mlp([3, 8, 8, 2], head=head, rng=rng)
    x, w = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    net.forward(x)
    grads, gx = net.backward(w)
    numeric = numerical_gradient(lambda: float(np.sum(w * net.forward(x))), net.params)
    assert relative_error(grads, numeric) < 1e-4
    numeric_x = numerical_gradient(lambda: float(np.sum(w * net.forward(x))), [x])
    assert relative_error(gx, numeric_x) < 1e-4


def test_params_are_views_of_flat():
    net = Mlp([2, 3, 1], rng=np.random.default_rng(0))
    net.flat[:] = 0.5
    assert all(np.all(p == 0.5) for p in net.params)
    g = net.flatten_grads([np.ones_like(p) for p in net.params])
    assert g.shape == net.flat.shape


def test_copy_is_independent():
    net = Mlp([2, 3, 1], rng=np.random.default_rng(0))
    clone = net.copy()
    clone.flat[:] = 0
    assert np.any(net.flat != 0)
    clone.load_from(net)
    assert param_hash(clone) == param_hash(net)


def test_adam_zero_gradient_no_change():
    p = np.array([1.0, -2.0])
    Adam([p], lr=0.1).step([p], [np.zeros(2)])
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_zero_step_size_no_change():
    p = np.array([1.0, -2.0])
    Adam([p], lr=0.0).step([p], [np.ones(2)])
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_moves_against_gradient():
    p = np.zeros(3)
    opt = Adam([p], lr=0.01)
    g = np.array([1.0, -1.0, 0.5])
    for _ in range(50):
        opt.step([p], [g])
    assert np.all(np.sign(p) == -np.sign(g))
    assert opt.t == 50


def test_adam_first_step_is_lr_sized():
    # bias correction makes the first step exactly lr * sign(g) (up to eps)
    p = np.zeros(2)
    Adam([p], lr=0.1).step([p], [np.array([3.0, -0.2])])
    np.testing.assert_allclose(p, [-0.1, 0.1], rtol=1e-6)


def test_adam_shape_mismatch():
    p = np.zeros(2)
    with pytest.raises(ValueError):
        Adam([p]).step([p], [np.zeros(3)])


def test_adam_state_round_trip():
    p, q = np.zeros(2), np.zeros(2)
    a, b = Adam([p], lr=0.1), Adam([q], lr=0.1)
    for g in ([1.0, 2.0], [0.5, -1.0]):
        a.step([p], [np.array(g)])
    b.load_state_arrays(a.state_arrays())
    q[:] = p
    a.step([p], [np.ones(2)])
    b.step([q], [np.ones(2)])
    np.testing.assert_array_equal(p, q)


def test_training_is_deterministic():
    def train():
        rng = np.random.default_rng(3)
        net = Mlp([2, 8, 1], rng=rng)
        opt = Adam([net.flat], lr=1e-2)
        x, y = rng.normal(size=(32, 2)), rng.normal(size=(32, 1))
        for _ in range(20):
            out = net.forward(x)
            grads, _ = net.backward((out - y) / len(x), input_grad=False)
            opt.step([net.flat], [net.flatten_grads(grads)])
        return net.flat.copy()
    np.testing.assert_array_equal(train(), train())


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    nets = {"a": Mlp([3, 4, 2], rng=rng), "b": Mlp([2, 5, 1], head="tanh", rng=rng)}
    path = tmp_path / "ck.npz"
    save_checkpoint(path, nets, {"extra": np.arange(3)}, {"note": "x"})
    loaded, arrays, meta = load_checkpoint(path)
    for k in nets:
        assert loaded[k].sizes == nets[k].sizes and loaded[k].head == nets[k].head
        np.testing.assert_array_equal(loaded[k].flat, nets[k].flat)
    np.testing.assert_array_equal(arrays["extra"], np.arange(3))
    assert meta == {"note": "x"}


def test_corrupt_checkpoint(tmp_path):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")


def test_relative_error_scale_free():
    assert relative_error([np.ones(3)], [np.ones(3)]) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)
