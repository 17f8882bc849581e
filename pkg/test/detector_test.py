import collections
import os
import shutil
import tempfile
import unittest

import numpy as np

import chorus.exceptions
from chorus.detector import (AnchorConfig, BackboneConfig, DetectConfig, Detector, RoiAlign, assign_anchors,
                             backbone_forward, build_targets, detector_loss, fcn_mask, generate_anchors, roi_align,
                             rpn_forward, train_detector)
from chorus.nn.gradcheck import check_gradients
from chorus.nn.optim import SgdConfig


def small_detector(seed=0, preset="tiny"):
    backbone = BackboneConfig(preset)
    return Detector(backbone, AnchorConfig(scales=(8, 16), ratios=(0.5, 1.0, 2.0), stride=backbone.stride), seed=seed)


def zero_heads(detector):
    for net in (detector.rpn_cls, detector.rpn_reg):
        for p in net.params().values():
            p.data = np.zeros_like(p.data)


def frame(seed=0, size=32):
    return np.random.default_rng(seed).uniform(0, 1, (5, size, size))


class AnchorTest(unittest.TestCase):

    def test_count(self):
        anchors = generate_anchors((2, 2), 16, (32, 64, 128), (0.5, 1.0, 2.0))
        assert anchors.shape == (36, 4)

    def test_square_anchor(self):
        anchors = generate_anchors((1, 1), 16, (64,), (1.0,))
        assert anchors.tolist() == [[8.0, 8.0, 64.0, 64.0]]

    def test_ratio_keeps_area(self):
        (cx, cy, w, h), = generate_anchors((1, 1), 16, (40,), (2.0,))
        assert abs(h / w - 2.0) < 1e-9
        assert abs(w * h - 1600.0) < 1e-6

    def test_order(self):
        anchors = generate_anchors((2, 3), 16, (8, 16), (1.0,))
        # (row, column, scale)
        assert anchors[0].tolist() == [8.0, 8.0, 8.0, 8.0]
        assert anchors[1].tolist() == [8.0, 8.0, 16.0, 16.0]
        assert anchors[2][:2].tolist() == [24.0, 8.0]
        assert anchors[6][:2].tolist() == [8.0, 24.0]

    def test_assignment(self):
        anchors = generate_anchors((2, 2), 16, (16,), (1.0,))
        labels, best = assign_anchors(anchors, [(0, 0, 16, 16)])
        assert labels.tolist() == [1, 0, 0, 0]
        labels, _ = assign_anchors(anchors, [])
        assert labels.tolist() == [0, 0, 0, 0]


class RoiAlignTest(unittest.TestCase):

    def test_constant_map(self):
        feature = np.full((2, 6, 6), 3.5)
        pooled, inside = roi_align(feature, (8, 8, 40, 24), 0.125)
        assert inside
        assert pooled.shape == (2, 7, 7)
        assert np.allclose(pooled, 3.5)

    def test_affine_map(self):
        feature = np.tile(np.arange(8, dtype=np.float64), (1, 8, 1))
        x, y, w, h = 4.0, 4.0, 16.0, 16.0
        pooled, _ = roi_align(feature, (x, y, w, h), 0.25)
        start = x * 0.25 - 0.5
        bin_w = w * 0.25 / 7
        expected = start + (np.arange(7) + 0.5) * bin_w
        assert np.allclose(pooled[0, 3], expected)

    def test_outside(self):
        pooled, inside = roi_align(np.ones((1, 4, 4)), (200, 200, 20, 20), 0.125)
        assert not inside
        assert not pooled.any()

    def test_layer_matches_function(self):
        feature = np.random.default_rng(0).standard_normal((1, 3, 5, 5))
        layer = RoiAlign([(4, 4, 20, 12)], 0.125)
        assert np.allclose(layer.forward(feature)[0], roi_align(feature[0], (4, 4, 20, 12), 0.125)[0])


class NetworkTest(unittest.TestCase):

    def test_feature_shape(self):
        detector = Detector()
        feature = backbone_forward(np.zeros((5, 256, 256)), detector)
        assert feature.shape == (1, 32, 16, 16)

    def test_presets_share_stride(self):
        for preset in ("tiny", "deep", "wide"):
            detector = Detector(BackboneConfig(preset))
            assert backbone_forward(frame(), detector).shape == (1, 32, 2, 2)

    def test_three_channels_rejected(self):
        with self.assertRaises(chorus.exceptions.ShapeError):
            backbone_forward(np.zeros((3, 32, 32)), small_detector())

    def test_too_small(self):
        with self.assertRaises(chorus.exceptions.ArgumentError):
            backbone_forward(np.zeros((5, 8, 8)), small_detector())

    def test_unknown_preset(self):
        with self.assertRaises(chorus.exceptions.ArgumentError):
            BackboneConfig("huge")

    def test_zero_heads(self):
        detector = small_detector()
        zero_heads(detector)
        scores, deltas = rpn_forward(backbone_forward(frame(), detector), detector)
        assert scores.shape == (2 * 2 * 6,)
        assert np.all(scores == 0.5)
        assert not deltas.any()

    def test_zero_mask_head(self):
        detector = small_detector()
        for p in detector.mask_head.params().values():
            p.data = np.zeros_like(p.data)
        masks = fcn_mask(np.ones((2, 32, 7, 7)), detector)
        assert masks.shape == (2, 28, 28)
        assert np.all(masks == 0.5)

    def test_untrained_detection(self):
        detector = small_detector()
        result = detector.run(frame(size=64), DetectConfig())
        assert 0 < len(result.candidates) <= 20
        scores = [c.score for c in result.candidates]
        assert scores == sorted(scores, reverse=True)
        for c in result.candidates:
            x, y, w, h = c.box
            assert x >= 0 and y >= 0 and x + w <= 64 + 1e-9 and y + h <= 64 + 1e-9
            assert c.mask.shape == (28, 28)
            assert c.feature.shape == (32, 7, 7)
        assert result.feature.shape == (32, 4, 4)
        assert result.image_size == (64, 64)

    def test_deterministic(self):
        a = small_detector(seed=3).run(frame(1))
        b = small_detector(seed=3).run(frame(1))
        assert [c.box for c in a.candidates] == [c.box for c in b.candidates]
        assert [c.score for c in a.candidates] == [c.score for c in b.candidates]

    def test_save_and_load(self):
        directory = tempfile.mkdtemp()
        try:
            path = os.path.join(directory, "detector.json")
            detector = small_detector(seed=5, preset="deep")
            detector.save(path, meta={"no_audio": True})
            loaded = Detector.load(path)
            assert loaded.meta["no_audio"] is True
            assert loaded.backbone_config.preset == "deep"
            assert loaded.anchor_config.scales == (8.0, 16.0)
            a = detector.run(frame(2)).candidates
            b = loaded.run(frame(2)).candidates
            assert len(a) == len(b)
            assert np.allclose([c.score for c in a], [c.score for c in b], atol=1e-5)
        finally:
            shutil.rmtree(directory)


class TrainTest(unittest.TestCase):

    def test_loss_gradients(self):
        detector = small_detector(seed=1)
        x = frame(3)
        anchors = generate_anchors((2, 2), 16, (8, 16), (0.5, 1.0, 2.0))
        targets = build_targets(anchors, [(4, 6, 14, 12)], (32, 32), np.random.default_rng(0))
        assert len(targets.positives) >= 1

        params = detector.params()
        blocks = collections.OrderedDict(
            (name, params[name]) for name in ("rpn_cls.0.weight", "rpn_reg.0.weight", "mask_head.6.weight"))

        def loss_fn(backward):
            if backward:
                detector.zero_grad()
            return detector_loss(detector, x, targets, backward=backward)["total"]

        report = check_gradients(loss_fn, blocks, tolerance=1e-4, max_coords=40)
        assert report.passed, report

    def test_full_loss_gradients(self):
        detector = small_detector(seed=2)
        x = frame(4)
        anchors = generate_anchors((2, 2), 16, (8, 16), (0.5, 1.0, 2.0))
        targets = build_targets(anchors, [(6, 4, 16, 14)], (32, 32), np.random.default_rng(1))
        assert targets.rois

        params = detector.params()
        names = ("backbone.0.weight", "backbone.0.bias", "backbone.6.weight", "rpn_trunk.0.weight",
                 "rpn_cls.0.bias", "rpn_reg.0.bias", "mask_head.0.weight", "mask_head.2.weight", "mask_head.6.bias")
        blocks = collections.OrderedDict((name, params[name]) for name in names)

        def loss_fn(backward):
            if backward:
                detector.zero_grad()
            return detector_loss(detector, x, targets, backward=backward)["total"]

        report = check_gradients(loss_fn, blocks, tolerance=1e-4, step=1e-5, max_coords=40, seed=5)
        assert report.passed, report
        assert list(report.errors) == list(names)
        assert sum(report.checked.values()) > 100

    def test_no_positives(self):
        with self.assertRaises(chorus.exceptions.InvalidCorpusError):
            train_detector([(frame(), [])], SgdConfig(epochs=1))

    def test_invalid_box(self):
        with self.assertRaises(chorus.exceptions.ArgumentError):
            train_detector([(frame(), [(0, 0, 0, 5)])], SgdConfig(epochs=1))

    def test_training_history(self):
        samples = [(frame(i), [(4 + i, 6, 14, 12)]) for i in range(3)]
        result = train_detector(samples, SgdConfig(lr=0.01, epochs=4, batch_size=1), detector=small_detector(2))
        assert len(result.history) == 4
        assert all(np.isfinite(result.history))
        assert result.history[-1] < result.history[0]

    def test_zero_epochs_leaves_params(self):
        detector = small_detector(4)
        before = {k: v.data.copy() for k, v in detector.params().items()}
        train_detector([(frame(), [(4, 4, 10, 10)])], SgdConfig(epochs=0), detector=detector)
        assert all(np.array_equal(before[k], v.data) for k, v in detector.params().items())
