import collections

import numpy as np

import chorus.exceptions
from chorus.boxes import anchors_to_boxes, iou_matrix

POSITIVE_IOU = 0.7
NEGATIVE_IOU = 0.3


class AnchorConfig(object):
    """
    Anchor layout: `scales` are the square roots of anchor areas in pixels, `ratios` are h:w.
    """

    def __init__(self, scales=(32, 64, 128), ratios=(0.5, 1.0, 2.0), stride=16):
        if not scales or not ratios:
            raise chorus.exceptions.ArgumentError("anchor scales and ratios must be non-empty")
        self.scales = tuple(float(s) for s in scales)
        self.ratios = tuple(float(r) for r in ratios)
        self.stride = int(stride)

    @property
    def per_cell(self):
        return len(self.scales) * len(self.ratios)

    def to_dict(self):
        return collections.OrderedDict([
            ("scales", list(self.scales)),
            ("ratios", list(self.ratios)),
            ("stride", self.stride),
        ])


def generate_anchors(feature_shape, stride, scales, ratios):
    """
    One anchor per (row i, column j, scale s, ratio r), in that nesting order, centered at
    ((j + 0.5) * stride, (i + 0.5) * stride) with h / w == r and area == s^2.

    :returns: (grid_h * grid_w * len(scales) * len(ratios), 4) array of (cx, cy, w, h).
    """
    if not len(scales) or not len(ratios):
        raise chorus.exceptions.ArgumentError("anchor scales and ratios must be non-empty")
    gh, gw = feature_shape
    shapes = []
    for s in scales:
        for r in ratios:
            shapes.append((s / np.sqrt(r), s * np.sqrt(r)))
    shapes = np.asarray(shapes, dtype=np.float64)

    cy, cx = np.meshgrid((np.arange(gh) + 0.5) * stride, (np.arange(gw) + 0.5) * stride, indexing='ij')
    centers = np.stack([cx.reshape(-1), cy.reshape(-1)], axis=1)
    anchors = np.empty((len(centers), len(shapes), 4))
    anchors[:, :, 0:2] = centers[:, None, :]
    anchors[:, :, 2:4] = shapes[None, :, :]
    return anchors.reshape(-1, 4)


def assign_anchors(anchors, gt_boxes, positive_iou=POSITIVE_IOU, negative_iou=NEGATIVE_IOU):
    """
    Labels anchors against ground-truth boxes: 1 when IoU >= positive_iou with some box or when
    the anchor is the best match of some box, 0 when its best IoU <= negative_iou, -1 (ignored)
    otherwise.

    :returns: (labels (K,), index of the best-matching gt box per anchor (K,))
    """
    k = len(anchors)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    labels = -np.ones(k, dtype=np.int64)
    if len(gt_boxes) == 0:
        labels[:] = 0
        return labels, np.zeros(k, dtype=np.int64)

    overlaps = iou_matrix(anchors_to_boxes(anchors), gt_boxes)
    best_gt = overlaps.argmax(axis=1)
    best_iou = overlaps.max(axis=1)
    labels[best_iou <= negative_iou] = 0
    labels[best_iou >= positive_iou] = 1
    for g in range(len(gt_boxes)):
        column = overlaps[:, g]
        if column.max() > 0:
            best = np.flatnonzero(column == column.max())
            labels[best] = 1
            best_gt[best] = g
    return labels, best_gt
