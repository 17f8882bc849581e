import collections

import numpy as np

import chorus.exceptions
from chorus import get_logger

logger = get_logger(__name__)


class SgdConfig(object):
    """
    Hyper-parameters of a training run. The defaults are the detector settings: learning rate
    0.0025 and 12 epochs.
    """

    def __init__(self, lr=0.0025, momentum=0.9, epochs=12, batch_size=2, seed=0):
        if not lr > 0:
            raise chorus.exceptions.ArgumentError("learning rate must be > 0, got {}".format(lr))
        if not 0.0 <= momentum < 1.0:
            raise chorus.exceptions.ArgumentError("momentum must be in [0, 1), got {}".format(momentum))
        if int(epochs) != epochs or epochs < 0:
            raise chorus.exceptions.ArgumentError("epochs must be a non-negative integer, got {}".format(epochs))
        if int(batch_size) != batch_size or batch_size < 1:
            raise chorus.exceptions.ArgumentError("batch size must be a positive integer, got {}".format(batch_size))
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.seed = int(seed)

    def to_dict(self):
        return collections.OrderedDict([
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("seed", self.seed),
        ])

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def __eq__(self, other):
        return isinstance(other, SgdConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return "SgdConfig({})".format(", ".join("{}={}".format(k, v) for k, v in self.to_dict().items()))


def sgd_step(params, grads, config, velocity):
    """
    One momentum step: v <- momentum * v + g; p <- p - lr * v.

    :param dict params: name -> numpy.ndarray
    :param dict grads: name -> numpy.ndarray, same shapes.
    :param SgdConfig config:
    :param dict velocity: name -> numpy.ndarray; missing entries start at zero.
    :returns: (updated params, updated velocity) as new dicts; the inputs are not modified.
    :raises NonFiniteGradientError: when any gradient holds NaN or Inf. Nothing is updated.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            finite = np.abs(g[np.isfinite(g)])
            raise chorus.exceptions.NonFiniteGradientError(name, float(finite.max()) if finite.size else float('nan'))

    new_params = collections.OrderedDict()
    new_velocity = collections.OrderedDict()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise chorus.exceptions.ShapeError(
                "gradient {} has shape {}, parameter has {}".format(name, g.shape, p.shape))
        v = velocity.get(name)
        v = g.copy() if v is None else config.momentum * v + g
        new_velocity[name] = v
        new_params[name] = p - config.lr * v
    return new_params, new_velocity


class Sgd(object):
    """
    Owns the velocity state for a fixed set of parameter Tensors and applies `sgd_step` to them
    in place.
    """

    def __init__(self, params, config):
        """
        :param collections.OrderedDict params: name -> Tensor
        :param SgdConfig config:
        """
        self.params = params
        self.config = config
        self.velocity = collections.OrderedDict()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, scale=1.0):
        """
        :param float scale: multiplies every gradient first, e.g. 1 / batch size.
        """
        values = collections.OrderedDict((n, p.data) for n, p in self.params.items())
        grads = collections.OrderedDict(
            (n, (p.grad if p.grad is not None else np.zeros_like(p.data)) * scale) for n, p in self.params.items())
        new_values, self.velocity = sgd_step(values, grads, self.config, self.velocity)
        for name, p in self.params.items():
            p.data = new_values[name]
