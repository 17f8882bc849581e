"""
Central finite-difference verification of analytic gradients.
"""
import collections

import numpy as np

from chorus import get_logger
from chorus.nn.layers import Sequential
from chorus.nn.tensor import Tensor

logger = get_logger(__name__)

STEP = 1e-4
ZERO = 1e-10
MIN_COORDS = 50
KINK_RATIO = 1e-2


class GradCheckReport(object):
    """
    Max relative error per parameter block, with the count of skipped coordinates (zero on
    both sides, or sitting on a kink where the function is not differentiable).
    """

    def __init__(self, tolerance):
        self.tolerance = tolerance
        self.errors = collections.OrderedDict()
        self.checked = collections.OrderedDict()
        self.skipped = collections.OrderedDict()

    @property
    def passed(self):
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    def to_dict(self):
        return collections.OrderedDict([
            ("passed", self.passed),
            ("tolerance", self.tolerance),
            ("blocks", [collections.OrderedDict([
                ("name", name),
                ("max_rel_error", self.errors[name]),
                ("checked", self.checked[name]),
                ("skipped", self.skipped[name]),
            ]) for name in self.errors]),
        ])

    def __repr__(self):
        return "GradCheckReport(passed={}, {})".format(
            self.passed, ", ".join("{}={:.2e}".format(k, v) for k, v in self.errors.items()))


def relative_error(analytic, numeric):
    """
    |a - n| / |n|, with |n| floored at 1e-6 so that vanishing gradients compare absolutely.
    """
    return abs(analytic - numeric) / max(abs(numeric), 1e-6)


def _coordinates(size, max_coords, rng):
    if size <= max_coords:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max(max_coords, MIN_COORDS), replace=False))


def check_gradients(loss_fn, blocks, tolerance=1e-4, step=STEP, max_coords=200, seed=0):
    """
    Compares analytic gradients with central differences coordinate by coordinate.

    :param loss_fn: `loss_fn(backward)` returns the scalar loss; when `backward` is true it must
        also fill the `.grad` of every Tensor in `blocks` (they are zeroed beforehand).
    :param collections.OrderedDict blocks: name -> Tensor to perturb.
    :param float tolerance: max allowed relative error.
    :param int max_coords: blocks larger than this are sampled (at least 50 coordinates).
    :rtype: GradCheckReport
    """
    rng = np.random.default_rng(seed)
    for t in blocks.values():
        t.zero_grad()
    loss_fn(True)
    analytic = collections.OrderedDict((name, t.grad.copy()) for name, t in blocks.items())

    report = GradCheckReport(tolerance)
    for name, t in blocks.items():
        flat = t.data.reshape(-1)
        worst, checked, skipped = 0.0, 0, 0
        for idx in _coordinates(flat.size, max_coords, rng):
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = loss_fn(False)
            flat[idx] = orig - step
            f_minus = loss_fn(False)
            flat[idx] = orig
            f_zero = loss_fn(False)

            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[idx]
            if abs(a) < ZERO and abs(numeric) < ZERO:
                skipped += 1
                continue
            right = (f_plus - f_zero) / step
            left = (f_zero - f_minus) / step
            scale = max(abs(right), abs(left), 1e-6)
            error = relative_error(a, numeric)
            if abs(right - left) > KINK_RATIO * scale:
                skipped += 1
                continue
            # a kink inside the step: the analytic value is one of the one-sided slopes
            if (error > tolerance and abs(right - left) > tolerance * scale
                    and min(relative_error(a, left), relative_error(a, right)) <= tolerance):
                skipped += 1
                continue
            worst = max(worst, error)
            checked += 1
        report.errors[name] = worst
        report.checked[name] = checked
        report.skipped[name] = skipped
        if worst > tolerance:
            logger.warning("gradient check failed for {}: max relative error {:.3e}".format(name, worst))
    return report


def projection_loss(output_shape, seed=0):
    """
    A fixed random linear scalarisation L = sum(out * R), so that dL/dout = R.
    """
    r = np.random.default_rng(seed).standard_normal(output_shape)
    return lambda out: (float(np.sum(out * r)), r)


def grad_check(layers, x, tolerance=1e-4, loss=None, check_input=False, max_coords=200, seed=0):
    """
    Checks every parameter block of `layers` (and optionally the input) against finite
    differences.

    :param layers: a Sequential or list of layers.
    :param numpy.ndarray x: input batch.
    :param loss: optional `loss(out) -> (value, d value / d out)`; defaults to a random projection.
    :rtype: GradCheckReport
    """
    net = layers if isinstance(layers, Sequential) else Sequential(layers)
    x_t = Tensor(np.array(x, dtype=np.float64), name="input")
    if loss is None:
        loss = projection_loss(net.forward(x_t.data).shape, seed=seed)

    blocks = collections.OrderedDict(net.params())
    if check_input:
        blocks["input"] = x_t

    def loss_fn(backward):
        out = net.forward(x_t.data)
        value, dout = loss(out)
        if backward:
            net.zero_grad()
            dx = net.backward(dout)
            if check_input:
                x_t.grad = dx
        return value

    return check_gradients(loss_fn, blocks, tolerance=tolerance, max_coords=max_coords, seed=seed)
