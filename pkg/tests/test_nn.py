"""Dense network: forward/backward math, Adam, checkpoints, gradient checks."""

import numpy as np
import pytest

from partgen.errors import DimensionMismatch, NonFiniteGradient
from partgen.nn import (
    AdamState,
    DenseNet,
    adam_step,
    backward,
    forward,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def small_net() -> DenseNet:
    return DenseNet.init([6, 16, 16, 4], seed=1)


def _quadratic_loss(net: DenseNet, x: np.ndarray, y: np.ndarray, dtype=np.float64):
    pred, tape = forward(net, x, dtype=dtype)
    diff = pred.astype(np.float64) - y
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    dy = (2.0 / x.shape[0]) * diff
    grads, _ = backward(net, tape, dy.astype(dtype))
    return loss, grads


class TestForward:
    def test_shapes(self, small_net):
        x = np.random.default_rng(0).standard_normal((5, 6))
        y, tape = forward(small_net, x)
        assert y.shape == (5, 4)
        assert len(tape.pre_activations) == 3

    def test_single_vector_matches_batch(self, small_net):
        x = np.random.default_rng(1).standard_normal(6)
        single, _ = forward(small_net, x)
        batched, _ = forward(small_net, x[None, :])
        assert single.shape == (4,)
        assert np.allclose(single, batched[0])

    def test_silu_hidden_identity_output(self):
        # one weight=1 path through a single hidden unit exposes the activation
        net = DenseNet.init([1, 1, 1], seed=0)
        net.weights[0][:] = 1.0
        net.biases[0][:] = 0.0
        net.weights[1][:] = 1.0
        net.biases[1][:] = 0.0
        for z in (-2.0, -0.5, 0.0, 0.7, 3.0):
            y, _ = forward(net, np.array([z]), dtype=np.float64)
            expected = z / (1.0 + np.exp(-z)) if z != 0.0 else 0.0
            assert abs(float(y[0]) - expected) < 1e-12

    def test_dimension_mismatch(self, small_net):
        with pytest.raises(DimensionMismatch):
            forward(small_net, np.zeros((3, 7)))

    def test_init_bounds_and_determinism(self):
        net = DenseNet.init([100, 50, 10], seed=3)
        again = DenseNet.init([100, 50, 10], seed=3)
        for w, w2 in zip(net.weights, again.weights):
            assert np.array_equal(w, w2)
        bound0 = np.sqrt(6.0 / 100)
        assert np.abs(net.weights[0]).max() <= bound0
        assert all(np.all(b == 0) for b in net.biases)
        assert all(w.dtype == np.float32 for w in net.weights)


class TestBackward:
    def test_matches_finite_differences(self, small_net):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((8, 6))
        y = rng.standard_normal((8, 4))
        err = grad_check(small_net, lambda n: _quadratic_loss(n, x, y), probes=20, seed=0)
        assert err < 1e-4

    def test_input_gradient(self, small_net):
        # check dloss/dx against finite differences as well
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 6))
        y = rng.standard_normal((1, 4))

        def loss_at(x_val):
            pred, _ = forward(small_net, x_val, dtype=np.float64)
            return float(np.sum((pred - y) ** 2))

        pred, tape = forward(small_net, x, dtype=np.float64)
        _, dx = backward(small_net, tape, 2.0 * (pred - y))
        h = 1e-6
        for j in range(6):
            bump = np.zeros_like(x)
            bump[0, j] = h
            fd = (loss_at(x + bump) - loss_at(x - bump)) / (2 * h)
            assert abs(fd - dx[0, j]) < 1e-6 * max(1.0, abs(fd))


class TestAdam:
    def test_zero_gradient_is_noop(self, small_net):
        state = AdamState.init(small_net)
        change = small_net.copy()
        zero = _quadratic_loss(small_net, np.zeros((2, 6)), np.zeros((2, 4)))[1].scaled(0.0)
        adam_step(change, zero, state)
        for w, w2 in zip(small_net.weights, change.weights):
            assert np.array_equal(w, w2)

    def test_first_step_magnitude(self, small_net):
        # with bias correction the first update has magnitude ~lr per param
        rng = np.random.default_rng(4)
        x, y = rng.standard_normal((8, 6)), rng.standard_normal((8, 4))
        _, grads = _quadratic_loss(small_net, x, y, dtype=np.float32)
        before = small_net.copy()
        state = AdamState.init(small_net, lr=1e-3)
        adam_step(small_net, grads, state)
        delta = np.abs(small_net.weights[0] - before.weights[0])
        moved = delta[grads.weights[0] != 0]
        assert moved.size > 0
        assert np.all(moved < 1.1e-3)
        assert np.median(moved) > 0.5e-3

    def test_nonfinite_gradient_rejected(self, small_net):
        state = AdamState.init(small_net)
        _, grads = _quadratic_loss(small_net, np.ones((2, 6)), np.ones((2, 4)))
        grads.weights[0][0, 0] = np.nan
        before = small_net.copy()
        with pytest.raises(NonFiniteGradient):
            adam_step(small_net, grads, state)
        for w, w2 in zip(small_net.weights, before.weights):
            assert np.array_equal(w, w2)

    def test_descends_on_fixed_batch(self, small_net):
        rng = np.random.default_rng(5)
        x, y = rng.standard_normal((16, 6)), rng.standard_normal((16, 4))
        state = AdamState.init(small_net, lr=1e-2)
        first = _quadratic_loss(small_net, x, y, dtype=np.float32)[0]
        for _ in range(200):
            _, grads = _quadratic_loss(small_net, x, y, dtype=np.float32)
            adam_step(small_net, grads, state)
        last = _quadratic_loss(small_net, x, y, dtype=np.float32)[0]
        assert last < 0.2 * first


class TestCheckpoint:
    def test_round_trip_without_adam(self, small_net, tmp_path):
        path = tmp_path / "net.bin"
        save_checkpoint(small_net, path)
        loaded, adam = load_checkpoint(path)
        assert adam is None
        assert loaded.layer_dims == small_net.layer_dims
        for w, w2 in zip(small_net.weights, loaded.weights):
            assert np.array_equal(w, w2)
        for b, b2 in zip(small_net.biases, loaded.biases):
            assert np.array_equal(b, b2)

    def test_round_trip_with_adam(self, small_net, tmp_path):
        rng = np.random.default_rng(6)
        x, y = rng.standard_normal((4, 6)), rng.standard_normal((4, 4))
        state = AdamState.init(small_net, lr=2e-3)
        for _ in range(3):
            _, grads = _quadratic_loss(small_net, x, y, dtype=np.float32)
            adam_step(small_net, grads, state)
        path = tmp_path / "net_adam.bin"
        save_checkpoint(small_net, path, adam=state)
        loaded, adam = load_checkpoint(path)
        assert adam is not None
        assert adam.step == state.step and adam.lr == state.lr
        for m, m2 in zip(state.m_weights, adam.m_weights):
            assert np.array_equal(m, m2)
        for v, v2 in zip(state.v_weights, adam.v_weights):
            assert np.array_equal(v, v2)
        for w, w2 in zip(small_net.weights, loaded.weights):
            assert np.array_equal(w, w2)

    def test_same_bytes_for_same_net(self, small_net, tmp_path):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(small_net, p1)
        save_checkpoint(small_net, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(Exception):
            load_checkpoint(path)
