import collections
import math
import os
import shutil
import tempfile
import unittest

import numpy as np
from hypothesis import given, strategies as st

import chorus.exceptions
import chorus.registry
from chorus.nn import (Conv2d, L2Normalize, Linear, ReLU, Sequential, Sgd, SgdConfig, Sigmoid, Tensor, bbox_loss,
                       bce_loss, contrastive_loss, grad_check, sgd_step, smooth_l1)
from chorus.nn.checkpoint import blob_path, load_checkpoint, save_checkpoint
from chorus.nn.gradcheck import check_gradients
from chorus.nn.losses import bbox_loss_with_grad, bce_with_grad, contrastive_with_grad, smooth_l1_grad


class LossTest(unittest.TestCase):

    def test_smooth_l1(self):
        assert smooth_l1(0.0) == 0.0
        assert smooth_l1(2.0) == 1.5
        assert smooth_l1(0.5) == 0.125
        assert smooth_l1(1.0) == 0.5
        assert smooth_l1(-2.0) == 1.5

    def test_smooth_l1_rejects_non_finite(self):
        with self.assertRaises(chorus.exceptions.ArgumentError):
            smooth_l1(float('nan'))
        with self.assertRaises(chorus.exceptions.ArgumentError):
            smooth_l1(float('inf'))

    def test_smooth_l1_derivative(self):
        assert smooth_l1_grad(2.0) == 1.0
        assert smooth_l1_grad(0.5) == 0.5
        assert smooth_l1_grad(-3.0) == -1.0

    def test_bbox_loss(self):
        assert bbox_loss((1, 2, 3, 4), (1, 2, 3, 4)) == 0.0
        assert bbox_loss((2, 0, 0, 0), (0, 0, 0, 0)) == 1.5
        assert bbox_loss((0.5, 0.5, 0.5, 0.5), (0, 0, 0, 0)) == 0.5
        with self.assertRaises(chorus.exceptions.ArgumentError):
            bbox_loss((0, 0, float('nan'), 0), (0, 0, 0, 0))

    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
    def test_bbox_loss_is_symmetric(self, t, t_hat):
        assert abs(bbox_loss(t, t_hat) - bbox_loss(t_hat, t)) < 1e-12
        assert bbox_loss(t, t_hat) >= 0.0

    def test_bbox_loss_vector_form_agrees(self):
        t = np.array([[2.0, 0.3, -0.4, 1.2], [0.0, 0.0, 0.0, 0.0]])
        total, grad = bbox_loss_with_grad(t, np.zeros((2, 4)))
        assert abs(total - (bbox_loss(t[0], (0, 0, 0, 0)) + bbox_loss(t[1], (0, 0, 0, 0)))) < 1e-12
        assert grad[0, 0] == 1.0
        assert abs(grad[0, 1] - 0.3) < 1e-12

    def test_bce(self):
        assert abs(bce_loss(0.5, 1) - math.log(2)) < 1e-12
        assert abs(bce_loss(0.5, 0) - math.log(2)) < 1e-12
        assert bce_loss(1.0, 1) < 1e-6
        with self.assertRaises(chorus.exceptions.ArgumentError):
            bce_loss(0.5, 2)

    def test_bce_vector_form(self):
        total, grad = bce_with_grad(np.array([0.5, 0.5]), np.array([1, 0]))
        assert abs(total - 2 * math.log(2)) < 1e-12
        assert abs(grad[0] + 2.0) < 1e-9
        assert abs(grad[1] - 2.0) < 1e-9

    def test_contrastive(self):
        assert contrastive_loss(0.0, 1, 1.0) == 0.0
        assert contrastive_loss(1.5, 0, 1.0) == 0.0
        assert contrastive_loss(0.0, 0, 1.0) == 1.0
        assert contrastive_loss(0.5, 1) == 0.25
        with self.assertRaises(chorus.exceptions.ArgumentError):
            contrastive_loss(-0.1, 1)

    def test_contrastive_derivative(self):
        _, grad = contrastive_with_grad(np.array([0.5, 0.25, 2.0]), np.array([1, 0, 0]))
        assert np.allclose(grad, [1.0, -1.5, 0.0])


class LayerTest(unittest.TestCase):

    def test_relu(self):
        out = ReLU().forward(np.array([[-1.0, 2.0, 0.0]]))
        assert out.tolist() == [[0.0, 2.0, 0.0]]

    def test_identity_conv(self):
        conv = Conv2d(3, 3, 1)
        conv.weight.data = np.eye(3).reshape(3, 3, 1, 1)
        x = np.random.default_rng(0).standard_normal((1, 3, 4, 5))
        assert np.allclose(conv.forward(x), x)

    def test_all_ones_conv(self):
        conv = Conv2d(1, 1, 3, padding=1)
        conv.weight.data = np.ones((1, 1, 3, 3))
        out = conv.forward(np.ones((1, 1, 5, 5)))
        assert out.shape == (1, 1, 5, 5)
        assert np.all(out[0, 0, 1:4, 1:4] == 9.0)
        assert out[0, 0, 0, 0] == 4.0

    def test_strided_conv_shape(self):
        conv = Conv2d(5, 8, 3, stride=2, padding=1)
        assert conv.forward(np.zeros((2, 5, 48, 96))).shape == (2, 8, 24, 48)

    def test_linear_gradient_is_input(self):
        layer = Linear(1, 1)
        layer.weight.data = np.array([[0.7]])
        layer.forward(np.array([[3.0]]))
        layer.zero_grad()
        layer.backward(np.array([[1.0]]))
        assert layer.weight.grad[0, 0] == 3.0

    def test_backward_before_forward(self):
        net = Sequential([Linear(2, 2), ReLU()])
        with self.assertRaises(chorus.exceptions.StateError):
            net.backward(np.zeros((1, 2)))
        with self.assertRaises(chorus.exceptions.StateError):
            Linear(2, 2).backward(np.zeros((1, 2)))

    def test_shape_error_names_layer(self):
        net = Sequential([Linear(4, 3), ReLU(), Linear(2, 1)])
        with self.assertRaises(chorus.exceptions.ShapeError) as ctx:
            net.forward(np.zeros((1, 4)))
        assert ctx.exception.layer_index == 2
        assert "layer 2" in str(ctx.exception)

    def test_l2_normalize(self):
        out = L2Normalize().forward(np.array([[3.0, 4.0], [0.0, 2.0]]))
        assert np.allclose(out, [[0.6, 0.8], [0.0, 1.0]])

    def test_l2_normalize_zero_row(self):
        layer = L2Normalize()
        out = layer.forward(np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 4.0]]))
        assert np.allclose(out[0], [0.5, 0.5, 0.5, 0.5])
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0)
        dx = layer.backward(np.ones((2, 4)))
        assert np.array_equal(dx[0], np.zeros(4))
        assert np.all(np.isfinite(dx))

    def test_tensor_rejects_empty_shape(self):
        with self.assertRaises(chorus.exceptions.ShapeError):
            Tensor(np.zeros((0, 3)))
        with self.assertRaises(chorus.exceptions.ShapeError):
            Tensor.from_flat((2, 3), [1, 2, 3])


class DoubledLinear(Linear):

    def backward(self, dy):
        dx = super(DoubledLinear, self).backward(dy)
        self.weight.grad *= 2.0
        return dx


class GradCheckTest(unittest.TestCase):

    def test_linear_passes(self):
        x = np.random.default_rng(1).standard_normal((3, 6))
        report = grad_check([Linear(6, 4, rng=1)], x, tolerance=1e-4, check_input=True)
        assert report.passed, report
        assert set(report.errors) == {"0.weight", "0.bias", "input"}

    def test_corrupted_gradient_fails(self):
        x = np.random.default_rng(2).standard_normal((3, 6))
        report = grad_check([DoubledLinear(6, 4, rng=2)], x, tolerance=1e-4)
        assert not report.passed
        assert abs(report.errors["0.weight"] - 1.0) < 1e-3, report.errors
        assert report.errors["0.bias"] < 1e-4

    def test_relu_kink_is_skipped(self):
        x = np.array([[0.0, 1.0, -1.0, 2.0]])
        report = grad_check([ReLU()], x, check_input=True)
        assert report.passed
        assert report.skipped["input"] >= 1

    def test_kink_inside_step_is_skipped(self):
        w = Tensor(np.zeros(1), name="w")

        def loss(slope):
            def fn(backward):
                if backward:
                    w.accumulate(np.array([slope]))
                value = w.data[0]
                return 2.0 * value + 0.01 * max(value - 5e-5, 0.0)
            return fn

        report = check_gradients(loss(2.0), collections.OrderedDict([("w", w)]))
        assert report.passed
        assert report.skipped["w"] == 1 and report.checked["w"] == 0

        report = check_gradients(loss(3.0), collections.OrderedDict([("w", w)]))
        assert not report.passed
        assert report.checked["w"] == 1

    def test_every_registered_kind(self):
        results = chorus.registry.registry.check_all(seeds=12)
        assert "conv2d" in results and "roi_align" in results
        assert sum(len(reports) for reports in results.values()) >= 100
        for kind, reports in results.items():
            for r in reports:
                assert r.passed, (kind, r)

    def test_small_network_with_bce(self):
        rng = np.random.default_rng(3)
        net = Sequential([Linear(5, 4, rng=rng), ReLU(), Linear(4, 1, rng=rng), Sigmoid()])
        x = rng.standard_normal((6, 5))
        y = np.array([1, 0, 1, 1, 0, 0])

        def loss(out):
            value, dp = bce_with_grad(out[:, 0], y)
            return value, dp[:, None]

        assert grad_check(net, x, loss=loss).passed


class SgdTest(unittest.TestCase):

    def test_plain_step(self):
        params, _ = sgd_step({"p": np.array([1.0])}, {"p": np.array([1.0])}, SgdConfig(lr=0.1, momentum=0.0), {})
        assert abs(params["p"][0] - 0.9) < 1e-12

    def test_momentum_recursion(self):
        config = SgdConfig(lr=0.1, momentum=0.9)
        params, velocity = {"p": np.array([0.0])}, {}
        for _ in range(2):
            params, velocity = sgd_step(params, {"p": np.array([1.0])}, config, velocity)
        assert abs(params["p"][0] + 0.29) < 1e-12

    def test_zero_gradient_decays_velocity(self):
        config = SgdConfig(lr=0.1, momentum=0.5)
        params, velocity = sgd_step({"p": np.array([1.0])}, {"p": np.array([0.0])}, config, {"p": np.array([0.0])})
        assert params["p"][0] == 1.0
        assert velocity["p"][0] == 0.0

    def test_non_finite_gradient_aborts(self):
        with self.assertRaises(chorus.exceptions.NonFiniteGradientError) as ctx:
            sgd_step({"w": np.ones(2)}, {"w": np.array([3.0, float('nan')])}, SgdConfig(), {})
        assert ctx.exception.layer == "w"
        assert ctx.exception.max_abs == 3.0

    def test_config_validation(self):
        with self.assertRaises(chorus.exceptions.ArgumentError):
            SgdConfig(lr=0)
        with self.assertRaises(chorus.exceptions.ArgumentError):
            SgdConfig(momentum=1.0)
        with self.assertRaises(chorus.exceptions.ArgumentError):
            SgdConfig(batch_size=0)

    def test_optimizer_updates_in_place(self):
        layer = Linear(1, 1)
        layer.weight.data = np.array([[1.0]])
        opt = Sgd(layer.params(), SgdConfig(lr=0.1, momentum=0.0))
        opt.zero_grad()
        layer.weight.grad = np.array([[2.0]])
        opt.step(scale=0.5)
        assert abs(layer.weight.data[0, 0] - 0.9) < 1e-12


class CheckpointTest(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        net = Sequential([Conv2d(2, 3, 3, padding=1, rng=rng), ReLU(), L2Normalize()])
        path = os.path.join(self.directory, "sync.json")
        save_checkpoint(path, {"visual": net}, meta={"tau": 0.5}, seed=4, config=SgdConfig().to_dict())
        assert os.path.exists(blob_path(path))

        checkpoint = load_checkpoint(path)
        assert checkpoint.meta == {"tau": 0.5}
        assert checkpoint.seed == 4
        assert checkpoint.config["lr"] == 0.0025
        loaded = checkpoint["visual"]
        assert loaded.describe() == net.describe()
        expected = net[0].weight.data.astype(np.float32).astype(np.float64)
        assert np.array_equal(loaded[0].weight.data, expected)

    def test_missing_checkpoint(self):
        with self.assertRaises(chorus.exceptions.MissingCheckpointError):
            load_checkpoint(os.path.join(self.directory, "nothing.json"))

    def test_not_a_manifest(self):
        path = os.path.join(self.directory, "bad.json")
        with open(path, "w") as f:
            f.write('{"format": "other"}')
        with open(blob_path(path), "wb") as f:
            f.write(b"")
        with self.assertRaises(chorus.exceptions.FormatError) as ctx:
            load_checkpoint(path)
        assert ctx.exception.field == "format"
