"""
ROIAlign: bilinear-sampled pooling of a box into a fixed 7x7 grid.

Feature cell (r, c) sits at image position ((c + 0.5) / scale, (r + 0.5) / scale), so an image
coordinate x maps to the continuous feature coordinate x * scale - 0.5. Every output bin is the
mean of sampling_ratio x sampling_ratio regularly spaced bilinear samples inside the bin. The
sample grid is a product of a row grid and a column grid, which makes the pooling separable:
pooled[c] = Wy @ F[c] @ Wx.T.
"""
import collections

import numpy as np

import chorus.exceptions
from chorus import get_logger
from chorus.nn.layers import Layer

logger = get_logger(__name__)

OUTPUT_SIZE = 7
SAMPLING_RATIO = 2


def sample_coordinates(start, length, output_size=OUTPUT_SIZE, sampling_ratio=SAMPLING_RATIO):
    """
    :returns: (output_size, sampling_ratio) continuous feature coordinates of the samples along
        one axis of a region starting at `start` with extent `length` (both in feature units).
    """
    bin_size = length / float(output_size)
    offsets = (np.arange(sampling_ratio) + 0.5) / sampling_ratio
    return start + (np.arange(output_size)[:, None] + offsets[None, :]) * bin_size


def _axis_weights(coords, size):
    """
    Linear interpolation weights of each sample along one axis, averaged per bin.

    Samples further than one cell outside [0, size - 1] contribute zero; the rest are clamped.
    """
    out_size, n = coords.shape
    weights = np.zeros((out_size, size))
    for b in range(out_size):
        for s in range(n):
            u = coords[b, s]
            if u < -1.0 or u > size:
                continue
            u = min(max(u, 0.0), size - 1.0)
            lo = int(np.floor(u))
            hi = min(lo + 1, size - 1)
            frac = u - lo
            if hi == lo:
                weights[b, lo] += 1.0
            else:
                weights[b, lo] += 1.0 - frac
                weights[b, hi] += frac
    return weights / n


def roi_weights(feature_shape, roi, spatial_scale, output_size=OUTPUT_SIZE, sampling_ratio=SAMPLING_RATIO):
    """
    :param tuple feature_shape: (Hf, Wf)
    :param roi: (x, y, w, h) in image pixels.
    :returns: (Wy, Wx) with shapes (output_size, Hf) and (output_size, Wf).
    """
    x, y, w, h = roi
    if w <= 0 or h <= 0:
        raise chorus.exceptions.ArgumentError("roi must have positive size, got {}".format(tuple(roi)))
    hf, wf = feature_shape
    ys = sample_coordinates(y * spatial_scale - 0.5, h * spatial_scale, output_size, sampling_ratio)
    xs = sample_coordinates(x * spatial_scale - 0.5, w * spatial_scale, output_size, sampling_ratio)
    return _axis_weights(ys, hf), _axis_weights(xs, wf)


def roi_align(feature, roi, spatial_scale, output_size=OUTPUT_SIZE, sampling_ratio=SAMPLING_RATIO):
    """
    :param numpy.ndarray feature: (C, Hf, Wf) feature map.
    :param roi: (x, y, w, h) in image pixels.
    :param float spatial_scale: feature cells per image pixel (1 / stride).
    :returns: (pooled (C, output_size, output_size), inside). `inside` is False when the roi
        lies entirely outside the feature map, in which case pooled is all zero.
    """
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 3:
        raise chorus.exceptions.ShapeError("roi_align expects a (C, H, W) feature map, got {}".format(feature.shape))
    wy, wx = roi_weights(feature.shape[1:], roi, spatial_scale, output_size, sampling_ratio)
    inside = bool(wy.any() and wx.any())
    if not inside:
        logger.warning("roi {} lies outside the {}x{} feature map".format(tuple(roi), *feature.shape[1:]))
    return np.einsum('ph,chw,qw->cpq', wy, feature, wx), inside


class RoiAlign(Layer):
    """
    ROIAlign over a fixed list of rois as a layer: (1, C, Hf, Wf) -> (R, C, 7, 7). Used to
    backpropagate mask and matcher losses into the backbone feature map.
    """
    kind = "roi_align"

    def __init__(self, rois, spatial_scale, output_size=OUTPUT_SIZE, sampling_ratio=SAMPLING_RATIO):
        super(RoiAlign, self).__init__()
        self.rois = [tuple(float(v) for v in r) for r in rois]
        self.spatial_scale = float(spatial_scale)
        self.output_size = int(output_size)
        self.sampling_ratio = int(sampling_ratio)

    def config(self):
        return collections.OrderedDict([
            ("rois", [list(r) for r in self.rois]),
            ("spatial_scale", self.spatial_scale),
            ("output_size", self.output_size),
            ("sampling_ratio", self.sampling_ratio),
        ])

    def check_input(self, x):
        if x.ndim != 4 or x.shape[0] != 1:
            raise chorus.exceptions.ShapeError("roi_align expects a (1, C, H, W) input, got {}".format(x.shape))

    def forward(self, x):
        self.check_input(x)
        weights = [roi_weights(x.shape[2:], r, self.spatial_scale, self.output_size, self.sampling_ratio)
                   for r in self.rois]
        self._cache = (x.shape, weights)
        if not weights:
            return np.zeros((0, x.shape[1], self.output_size, self.output_size))
        return np.stack([np.einsum('ph,chw,qw->cpq', wy, x[0], wx) for wy, wx in weights])

    def backward(self, dy):
        x_shape, weights = self._cached()
        dx = np.zeros(x_shape)
        for r, (wy, wx) in enumerate(weights):
            dx[0] += np.einsum('ph,cpq,qw->chw', wy, dy[r], wx)
        return dx
