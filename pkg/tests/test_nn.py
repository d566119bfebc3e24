import numpy as np
import pytest

from phaseret import nn
from phaseret.nn import (
    AdamState,
    BatchNorm,
    Dense,
    DenseNet,
    Dropout,
    ReLU,
    Sigmoid,
    adam_step,
    gradient_check,
    loss_and_grad,
    make_mlp,
)


def small_net(rng, d_in=5, width=7, d_out=3, dropout=0.0):
    return make_mlp(d_in, width, d_out, hidden_layers=3, dropout_rate=dropout,
                    rng=rng, dtype=np.float64)


class TestForward:
    def test_zero_weight_net_outputs_half(self, rng):
        net = small_net(rng)
        for key, p in net.param_items():
            p[...] = 0.0
        out = net.forward(np.ones((4, 5)), train=False)
        np.testing.assert_allclose(out, 0.5)

    def test_infer_mode_is_deterministic(self, rng):
        net = make_mlp(6, 8, 4, dropout_rate=0.5, rng=rng, dtype=np.float64)
        x = rng.normal(size=(3, 6))
        np.testing.assert_array_equal(net.forward(x), net.forward(x))

    def test_hand_computed_affine(self):
        layer = Dense(2, 2, np.random.default_rng(0), dtype=np.float64)
        layer.params["weight"][...] = [[1.0, 2.0], [3.0, 4.0]]
        layer.params["bias"][...] = [0.5, -0.5]
        out = layer.forward(np.array([[1.0, 1.0], [2.0, 0.0]]), train=False)
        np.testing.assert_allclose(out, [[4.5, 5.5], [2.5, 3.5]])

    def test_dimension_mismatch_raises(self, rng):
        net = small_net(rng)
        with pytest.raises(ValueError):
            net.forward(np.ones((2, 9)))

    def test_rows_are_independent_at_inference(self, rng):
        net = small_net(rng)
        x = rng.normal(size=(6, 5))
        full = net.forward(x)
        np.testing.assert_allclose(full[2:3], net.forward(x[2:3]), rtol=1e-12)

    def test_sigmoid_output_strictly_inside_unit_interval(self, rng):
        net = make_mlp(5, 16, 4, rng=rng, dtype=np.float64)
        out = net.forward(rng.uniform(size=(8, 5)))
        assert (out > 0).all() and (out < 1).all()

    def test_train_mode_dropout_requires_rng(self, rng):
        net = make_mlp(5, 8, 3, dropout_rate=0.3, rng=rng, dtype=np.float64)
        with pytest.raises(ValueError):
            net.forward(np.ones((2, 5)), train=True)


class TestBackward:
    def test_gradcheck_plain_dense_relu(self, rng):
        net = DenseNet(
            [
                Dense(4, 6, rng, dtype=np.float64),
                ReLU(),
                Dense(6, 3, rng, output_layer=True, dtype=np.float64),
                Sigmoid(),
            ]
        )
        x = rng.normal(size=(4, 4))
        target = rng.uniform(0.2, 0.8, size=(4, 3))
        assert gradient_check(net, x, target, nn.MSE) < 1e-4

    def test_gradcheck_full_block_with_batchnorm(self, rng):
        net = small_net(rng)
        x = rng.normal(size=(8, 5))
        target = rng.uniform(0.2, 0.8, size=(8, 3))
        assert gradient_check(net, x, target, nn.MSE) < 1e-3

    def test_gradcheck_with_dropout_frozen_mask(self, rng):
        net = small_net(rng, dropout=0.25)
        x = rng.normal(size=(6, 5))
        target = rng.uniform(0.2, 0.8, size=(6, 3))
        assert gradient_check(net, x, target, nn.MSE, dropout_seed=3) < 1e-3

    def test_gradcheck_mae_off_kinks(self, rng):
        net = DenseNet(
            [
                Dense(4, 5, rng, dtype=np.float64),
                ReLU(),
                Dense(5, 2, rng, output_layer=True, dtype=np.float64),
                Sigmoid(),
            ]
        )
        x = rng.normal(size=(3, 4))
        # targets far from the sigmoid outputs, so |pred - target| never
        # crosses zero during the +-h perturbations
        target = np.full((3, 2), 2.0)
        assert gradient_check(net, x, target, nn.MAE) < 1e-4

    def test_saturated_sigmoid_has_vanishing_gradient(self, rng):
        net = DenseNet([Dense(2, 2, rng, dtype=np.float64), Sigmoid()])
        net.layers[0].params["weight"][...] = 0.0
        net.layers[0].params["bias"][...] = 40.0
        out = net.forward(rng.normal(size=(3, 2)), train=True)
        _, grad = loss_and_grad(nn.MSE, out, np.zeros((3, 2)))
        net.backward(grad)
        assert np.max(np.abs(net.layers[0].grads["weight"])) < 1e-12

    def test_dropout_rate_zero_matches_no_dropout(self, rng):
        seed_rng = np.random.default_rng(11)
        with_drop = make_mlp(5, 7, 3, dropout_rate=0.0, rng=seed_rng, dtype=np.float64)
        seed_rng = np.random.default_rng(11)
        without = DenseNet(
            [l for l in make_mlp(5, 7, 3, dropout_rate=0.0, rng=seed_rng, dtype=np.float64).layers
             if not isinstance(l, Dropout)]
        )
        x = rng.normal(size=(4, 5))
        target = rng.uniform(size=(4, 3))
        for net in (with_drop, without):
            out = net.forward(x, train=True, rng=np.random.default_rng(0))
            _, g = loss_and_grad(nn.MSE, out, target)
            net.backward(g)
        for (ka, ga), (kb, gb) in zip(with_drop.grad_items(), without.grad_items()):
            np.testing.assert_allclose(ga, gb, rtol=1e-12)

    def test_backward_without_forward_raises(self, rng):
        net = small_net(rng)
        with pytest.raises(RuntimeError):
            net.backward(np.ones((2, 3)))

    def test_backward_after_infer_forward_raises(self, rng):
        net = small_net(rng)
        net.forward(np.ones((2, 5)), train=False)
        with pytest.raises(RuntimeError):
            net.backward(np.ones((2, 3)))


class TestLosses:
    def test_zero_when_equal(self, rng):
        pred = rng.uniform(size=(3, 4))
        for kind in (nn.MSE, nn.MAE):
            value, grad = loss_and_grad(kind, pred, pred.copy())
            assert value == 0.0
            np.testing.assert_array_equal(grad, np.zeros_like(pred))

    def test_known_values(self):
        pred = np.full((2, 8), 0.5)
        target = np.zeros((2, 8))
        assert loss_and_grad(nn.MSE, pred, target)[0] == pytest.approx(0.25)
        assert loss_and_grad(nn.MAE, pred, target)[0] == pytest.approx(0.5)

    def test_mae_gradient_entries(self, rng):
        pred = rng.normal(size=(4, 6))
        target = rng.normal(size=(4, 6))
        target[0, 0] = pred[0, 0]  # force one tie
        _, grad = loss_and_grad(nn.MAE, pred, target)
        scaled = grad * pred.size
        assert set(np.unique(scaled)) <= {-1.0, 0.0, 1.0}
        assert scaled[0, 0] == 0.0

    def test_mse_gradient_is_consistent_with_value(self, rng):
        pred = rng.normal(size=(3, 5))
        target = rng.normal(size=(3, 5))
        value, grad = loss_and_grad(nn.MSE, pred, target)
        h = 1e-7
        bumped = pred.copy()
        bumped[1, 2] += h
        v2, _ = loss_and_grad(nn.MSE, bumped, target)
        assert (v2 - value) / h == pytest.approx(grad[1, 2], rel=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_and_grad(nn.MSE, np.zeros((2, 2)), np.zeros((2, 3)))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            loss_and_grad("huber", np.zeros((2, 2)), np.zeros((2, 2)))


class TestAdam:
    def test_first_step_magnitude_is_learning_rate(self):
        layer = Dense(1, 1, np.random.default_rng(0), dtype=np.float64)
        layer.params["weight"][...] = 0.0
        layer.grads = {"weight": np.ones((1, 1)), "bias": np.zeros(1)}
        net = DenseNet([layer])
        state = AdamState(learning_rate=1e-3)
        adam_step(net, state)
        assert layer.params["weight"][0, 0] == pytest.approx(-1e-3, rel=1e-5)
        assert state.t == 1

    def test_zero_gradient_leaves_params_unchanged(self, rng):
        net = small_net(rng)
        before = {k: p.copy() for k, p in net.param_items()}
        for i, layer in enumerate(net.layers):
            layer.grads = {name: np.zeros_like(p) for name, p in layer.params.items()}
        adam_step(net, AdamState())
        for k, p in net.param_items():
            np.testing.assert_array_equal(p, before[k])

    def test_constant_gradient_moves_monotonically(self):
        layer = Dense(1, 1, np.random.default_rng(0), dtype=np.float64)
        layer.params["weight"][...] = 0.0
        net = DenseNet([layer])
        state = AdamState(learning_rate=1e-2)
        w = []
        for _ in range(3):
            layer.grads = {"weight": np.ones((1, 1)), "bias": np.zeros(1)}
            adam_step(net, state)
            w.append(float(layer.params["weight"][0, 0]))
        assert w[0] > w[1] > w[2]


class TestBatchNorm:
    def test_train_output_is_normalized(self, rng):
        bn = BatchNorm(10, dtype=np.float64)
        x = rng.normal(3.0, 2.5, size=(64, 10))
        out = bn.forward(x, train=True)
        assert np.max(np.abs(out.mean(axis=0))) < 1e-6
        assert np.max(np.abs(out.var(axis=0) - 1.0)) < 1e-4

    def test_infer_uses_running_statistics(self, rng):
        bn = BatchNorm(4, dtype=np.float64)
        x = rng.normal(1.0, 2.0, size=(32, 4))
        for _ in range(200):
            bn.forward(x, train=True)
        out = bn.forward(x, train=False)
        assert np.max(np.abs(out.mean(axis=0))) < 0.05

    def test_running_variance_stays_positive(self, rng):
        bn = BatchNorm(3, dtype=np.float64)
        bn.forward(rng.normal(size=(16, 3)), train=True)
        assert (bn.running_var > 0).all()
