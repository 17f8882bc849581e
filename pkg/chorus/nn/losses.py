"""
Loss functions. Each scalar form mirrors a vectorised `*_with_grad` form that the training
loops use; both evaluate the same expression so the gradient checks cover both.
"""
import math

import numpy as np

import chorus.exceptions

BCE_EPS = 1e-7
CONTRASTIVE_MARGIN = 1.0


def _finite(value, what):
    if not math.isfinite(value):
        raise chorus.exceptions.ArgumentError("{} must be finite, got {}".format(what, value))
    return value


def smooth_l1(x):
    """
    0.5 x^2 when |x| < 1, |x| - 0.5 otherwise.
    """
    x = _finite(float(x), "smooth_l1 input")
    if abs(x) < 1.0:
        return 0.5 * x * x
    return abs(x) - 0.5


def smooth_l1_grad(x):
    x = _finite(float(x), "smooth_l1 input")
    if abs(x) < 1.0:
        return x
    return math.copysign(1.0, x)


def smooth_l1_with_grad(x):
    """
    :param numpy.ndarray x: residuals of any shape.
    :returns: (elementwise loss, elementwise derivative)
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise chorus.exceptions.ArgumentError("smooth_l1 input must be finite")
    ax = np.abs(x)
    inner = ax < 1.0
    loss = np.where(inner, 0.5 * x * x, ax - 0.5)
    grad = np.where(inner, x, np.sign(x))
    return loss, grad


def _box4(t, what):
    t = np.asarray(tuple(t), dtype=np.float64)
    if t.shape != (4,):
        raise chorus.exceptions.ArgumentError("{} must have 4 components (x, y, w, h)".format(what))
    if not np.all(np.isfinite(t)):
        raise chorus.exceptions.ArgumentError("{} has non-finite components: {}".format(what, t.tolist()))
    return t


def bbox_loss(t, t_hat):
    """
    Sum of smooth_l1(t_i - t_hat_i) over i in {x, y, w, h}.

    :param t: predicted BoxParam (or any 4-sequence of deltas).
    :param t_hat: ground-truth BoxParam.
    :rtype: float
    """
    t = _box4(t, "t")
    t_hat = _box4(t_hat, "t_hat")
    total = 0.0
    for i in range(4):
        total += smooth_l1(t[i] - t_hat[i])
    return total


def bbox_loss_with_grad(t, t_hat):
    """
    :param numpy.ndarray t: (K, 4) predicted deltas.
    :param numpy.ndarray t_hat: (K, 4) target deltas.
    :returns: (total loss over all K rows, d loss / d t)
    """
    loss, grad = smooth_l1_with_grad(np.asarray(t, dtype=np.float64) - np.asarray(t_hat, dtype=np.float64))
    return float(loss.sum()), grad


def _label(y):
    if y not in (0, 1):
        raise chorus.exceptions.ArgumentError("binary label must be 0 or 1, got {!r}".format(y))
    return int(y)


def bce_loss(p, y):
    """
    -(y ln p + (1 - y) ln(1 - p)) with p clamped to [BCE_EPS, 1 - BCE_EPS].
    """
    y = _label(y)
    p = min(max(float(p), BCE_EPS), 1.0 - BCE_EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def bce_with_grad(p, y):
    """
    :param numpy.ndarray p: probabilities.
    :param numpy.ndarray y: labels in {0, 1}, same shape.
    :returns: (summed loss, d loss / d p). The derivative is zero where the clamp is active.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise chorus.exceptions.ArgumentError("binary labels must be 0 or 1")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    active = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    grad = np.where(active, (pc - y) / (pc * (1.0 - pc)), 0.0)
    return float(loss.sum()), grad


def contrastive_loss(d, y, margin=CONTRASTIVE_MARGIN):
    """
    y d^2 + (1 - y) max(0, margin - d)^2 for a pair at embedding distance d.
    """
    d = _finite(float(d), "distance")
    if d < 0:
        raise chorus.exceptions.ArgumentError("distance must be non-negative, got {}".format(d))
    if margin <= 0:
        raise chorus.exceptions.ArgumentError("margin must be positive, got {}".format(margin))
    y = _label(y)
    return y * d * d + (1 - y) * max(0.0, margin - d) ** 2


def contrastive_with_grad(d, y, margin=CONTRASTIVE_MARGIN):
    """
    :returns: (summed loss, d loss / d distance)
    """
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(d < 0):
        raise chorus.exceptions.ArgumentError("distances must be non-negative")
    slack = np.maximum(0.0, margin - d)
    loss = y * d * d + (1.0 - y) * slack * slack
    grad = 2.0 * y * d - 2.0 * (1.0 - y) * slack
    return float(loss.sum()), grad
