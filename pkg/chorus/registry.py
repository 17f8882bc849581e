import collections

import numpy as np

import chorus.exceptions
import chorus.nn.layers as layers
import chorus.detector.roi as roi
from chorus import get_logger
from chorus.nn.gradcheck import grad_check

logger = get_logger(__name__)


class Registry(object):
    """
    Maps layer kinds to their classes. Checkpoints rebuild networks through `build`, and the
    gradient suite walks every registered kind with the sample factory registered alongside it.
    """

    def __init__(self):
        self.kinds = collections.OrderedDict()
        self.samples = {}

    def register(self, cls, sample=None):
        """
        :param cls: a Layer subclass with a unique `kind`.
        :param sample: optional `sample(rng) -> (layer, input)` used by `check`.
        """
        self.kinds[cls.kind] = cls
        if sample is not None:
            self.samples[cls.kind] = sample

    def build(self, description):
        description = dict(description)
        kind = description.pop("kind")
        if kind not in self.kinds:
            raise chorus.exceptions.FormatError("unknown layer kind {!r}".format(kind), field="kind")
        return self.kinds[kind](**description)

    def check(self, kind, seeds=1, tolerance=1e-4):
        """
        Runs `seeds` gradient checks (parameters and input) of one layer kind.

        :returns: the list of GradCheckReports, one per seed.
        """
        reports = []
        for seed in range(seeds):
            layer, x = self.samples[kind](np.random.default_rng(seed))
            reports.append(grad_check([layer], x, tolerance=tolerance, check_input=True, seed=seed))
        return reports

    def check_all(self, seeds=1, tolerance=1e-4):
        out = collections.OrderedDict()
        for kind in self.kinds:
            if kind in self.samples:
                out[kind] = self.check(kind, seeds=seeds, tolerance=tolerance)
        return out


def _normal(rng, *shape):
    return rng.standard_normal(shape)


def _install_defaults(r):
    r.register(layers.Conv2d, lambda rng: (
        layers.Conv2d(2, 3, 3, stride=2, padding=1, rng=rng), _normal(rng, 2, 2, 5, 5)))
    r.register(layers.Linear, lambda rng: (layers.Linear(6, 4, rng=rng), _normal(rng, 3, 6)))
    r.register(layers.ReLU, lambda rng: (layers.ReLU(), _normal(rng, 2, 7)))
    r.register(layers.Sigmoid, lambda rng: (layers.Sigmoid(), _normal(rng, 2, 7)))
    r.register(layers.MaxPool2d, lambda rng: (layers.MaxPool2d(2), _normal(rng, 1, 2, 4, 4)))
    r.register(layers.Upsample, lambda rng: (layers.Upsample(2), _normal(rng, 1, 2, 3, 3)))
    r.register(layers.Flatten, lambda rng: (layers.Flatten(), _normal(rng, 2, 2, 3)))
    r.register(layers.L2Normalize, lambda rng: (layers.L2Normalize(), _normal(rng, 3, 5)))
    r.register(roi.RoiAlign, lambda rng: (
        roi.RoiAlign([[4.0 + rng.uniform(0, 4), 4.0 + rng.uniform(0, 4), 20.0, 16.0]], spatial_scale=0.125),
        _normal(rng, 1, 2, 6, 6)))


registry = Registry()
_install_defaults(registry)


def configure():
    global registry
    registry = Registry()
    _install_defaults(registry)


def register(cls, sample=None):
    registry.register(cls, sample)


def build(description):
    return registry.build(description)
