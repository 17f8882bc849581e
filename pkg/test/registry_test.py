import unittest

import chorus.exceptions
import chorus.registry
from chorus.nn.layers import Layer, Linear


class Doubling(Layer):
    kind = "doubling"

    def forward(self, x):
        self._cache = x
        return 2.0 * x

    def backward(self, dy):
        self._cached()
        return 2.0 * dy


class TestRegistry(unittest.TestCase):

    def tearDown(self):
        chorus.registry.configure()

    def test_builtin_kinds(self):
        kinds = list(chorus.registry.registry.kinds)
        for kind in ("conv2d", "linear", "relu", "sigmoid", "maxpool2d", "upsample", "flatten", "l2norm",
                     "roi_align"):
            assert kind in kinds, kinds

    def test_build_from_description(self):
        layer = chorus.registry.build(Linear(3, 2).describe())
        assert isinstance(layer, Linear)
        assert (layer.in_features, layer.out_features) == (3, 2)

    def test_unknown_kind(self):
        with self.assertRaises(chorus.exceptions.FormatError) as ctx:
            chorus.registry.build({"kind": "attention"})
        assert ctx.exception.field == "kind"

    def test_register_and_check(self):
        chorus.registry.register(Doubling, lambda rng: (Doubling(), rng.standard_normal((2, 3))))
        assert chorus.registry.registry.kinds["doubling"] is Doubling
        reports = chorus.registry.registry.check("doubling", seeds=2)
        assert len(reports) == 2
        assert all(r.passed for r in reports)

    def test_configure_resets(self):
        chorus.registry.register(Doubling)
        chorus.registry.configure()
        assert "doubling" not in chorus.registry.registry.kinds
        assert "linear" in chorus.registry.registry.kinds

    def test_kind_without_sample_is_not_checked(self):
        chorus.registry.register(Doubling)
        assert "doubling" not in chorus.registry.registry.check_all(seeds=1)
