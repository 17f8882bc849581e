"""
Box geometry shared by the detector, matcher and evaluation. Boxes are (x, y, w, h) in pixels
with (x, y) the top-left corner; anchors are (cx, cy, w, h).
"""
import collections
import math

import numpy as np

import chorus.exceptions

BoxParam = collections.namedtuple('BoxParam', ['tx', 'ty', 'tw', 'th'])

DELTA_CLAMP = 4.0


def iou(a, b):
    """
    Intersection over union of two boxes; 0 when they are disjoint or either has zero area.
    """
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(a, b):
    """
    :param numpy.ndarray a: (N, 4) boxes
    :param numpy.ndarray b: (M, 4) boxes
    :returns: (N, M) pairwise IoU
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0, None)
    inter = iw * ih
    area_a = np.clip(a[:, 2:3], 0, None) * np.clip(a[:, 3:4], 0, None)
    area_b = np.clip(b[:, 2], 0, None) * np.clip(b[:, 3], 0, None)
    union = area_a + area_b - inter
    valid = (area_a > 0) & (area_b > 0) & (union > 0)
    return np.where(valid, inter / np.where(union > 0, union, 1.0), 0.0)


def clip_box(box, width, height):
    x, y, w, h = box
    x1 = min(max(x, 0.0), width)
    y1 = min(max(y, 0.0), height)
    x2 = min(max(x + w, 0.0), width)
    y2 = min(max(y + h, 0.0), height)
    return (x1, y1, x2 - x1, y2 - y1)


def box_center(box):
    x, y, w, h = box
    return (x + w / 2.0, y + h / 2.0)


def anchor_box(anchor):
    cx, cy, w, h = anchor
    return (cx - w / 2.0, cy - h / 2.0, w, h)


def anchors_to_boxes(anchors):
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    out = anchors.copy()
    out[:, 0] -= anchors[:, 2] / 2.0
    out[:, 1] -= anchors[:, 3] / 2.0
    return out


def encode_box(anchor, box):
    """
    The deltas that turn `anchor` into `box`: center offsets normalised by anchor size, and log
    size ratios.

    :rtype: BoxParam
    """
    acx, acy, aw, ah = anchor
    cx, cy = box_center(box)
    w, h = box[2], box[3]
    if w <= 0 or h <= 0 or aw <= 0 or ah <= 0:
        raise chorus.exceptions.ArgumentError("cannot encode degenerate box {} against {}".format(box, anchor))
    return BoxParam((cx - acx) / aw, (cy - acy) / ah, math.log(w / aw), math.log(h / ah))


def decode_box(anchor, delta, image_size=None):
    """
    Inverse of `encode_box`. tw and th are clamped to +/-4 before exponentiation.

    :param tuple image_size: optional (width, height) to clip the result to.
    """
    acx, acy, aw, ah = anchor
    tx, ty, tw, th = delta
    tw = min(max(tw, -DELTA_CLAMP), DELTA_CLAMP)
    th = min(max(th, -DELTA_CLAMP), DELTA_CLAMP)
    cx = acx + tx * aw
    cy = acy + ty * ah
    w = aw * math.exp(tw)
    h = ah * math.exp(th)
    box = (cx - w / 2.0, cy - h / 2.0, w, h)
    if image_size is not None:
        box = clip_box(box, image_size[0], image_size[1])
    return box


def encode_boxes(anchors, boxes):
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    cx = boxes[:, 0] + boxes[:, 2] / 2.0
    cy = boxes[:, 1] + boxes[:, 3] / 2.0
    return np.stack([
        (cx - anchors[:, 0]) / anchors[:, 2],
        (cy - anchors[:, 1]) / anchors[:, 3],
        np.log(boxes[:, 2] / anchors[:, 2]),
        np.log(boxes[:, 3] / anchors[:, 3]),
    ], axis=1)


def decode_boxes(anchors, deltas, image_size=None):
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    tw = np.clip(deltas[:, 2], -DELTA_CLAMP, DELTA_CLAMP)
    th = np.clip(deltas[:, 3], -DELTA_CLAMP, DELTA_CLAMP)
    cx = anchors[:, 0] + deltas[:, 0] * anchors[:, 2]
    cy = anchors[:, 1] + deltas[:, 1] * anchors[:, 3]
    w = anchors[:, 2] * np.exp(tw)
    h = anchors[:, 3] * np.exp(th)
    x1, y1 = cx - w / 2.0, cy - h / 2.0
    x2, y2 = x1 + w, y1 + h
    if image_size is not None:
        width, height = image_size
        x1, x2 = np.clip(x1, 0, width), np.clip(x2, 0, width)
        y1, y2 = np.clip(y1, 0, height), np.clip(y2, 0, height)
    return np.stack([x1, y1, x2 - x1, y2 - y1], axis=1)


def nms(boxes, scores, iou_threshold):
    """
    Greedy non-maximum suppression: visit boxes by descending score (ties by lower index), keep
    a box unless its IoU with an already kept box exceeds `iou_threshold`.

    :returns: kept indices in visiting order.
    :rtype: list
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(boxes) != len(scores):
        raise chorus.exceptions.ArgumentError(
            "nms got {} boxes and {} scores".format(len(boxes), len(scores)))
    order = np.argsort(-scores, kind='stable')
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= iou_matrix(boxes[i], boxes)[0] > iou_threshold
    return keep


def rasterize_box(box, height, width):
    """
    Binary (height, width) mask of the pixels whose centers lie inside `box`, edges inclusive.
    """
    mask = np.zeros((height, width), dtype=np.uint8)
    x, y, w, h = box
    c0 = max(int(math.ceil(x - 0.5)), 0)
    c1 = min(int(math.floor(x + w - 0.5)), width - 1)
    r0 = max(int(math.ceil(y - 0.5)), 0)
    r1 = min(int(math.floor(y + h - 0.5)), height - 1)
    if c0 <= c1 and r0 <= r1:
        mask[r0:r1 + 1, c0:c1 + 1] = 1
    return mask
