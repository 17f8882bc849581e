"""
Training of the gaze-candidate network: BCE on sampled anchor objectness, smooth-L1 box
regression on positive anchors, and mask BCE inside ground-truth boxes, all weighted 1.0.
"""
import collections

import numpy as np

import chorus.event
import chorus.exceptions
from chorus import get_logger
from chorus.boxes import anchors_to_boxes, clip_box, encode_boxes
from chorus.detector.anchors import assign_anchors, generate_anchors
from chorus.detector.network import (MASK_SIZE, Detector, _frame_array, backbone_forward, rpn_backward,
                                     rpn_forward)
from chorus.detector.roi import RoiAlign
from chorus.nn.losses import bbox_loss_with_grad, bce_with_grad
from chorus.nn.optim import Sgd, SgdConfig

logger = get_logger(__name__)

ANCHORS_PER_IMAGE = 64
POSITIVE_FRACTION = 0.5
MASK_ROIS = 4


class AnchorTargets(object):
    """
    The sampled supervision for one image: which anchors contribute to the objectness loss and
    with what label, the regression targets of the positive ones, and the rois + 28x28 targets
    of the mask loss.
    """

    def __init__(self, sampled, labels, positives, box_targets, rois, mask_targets):
        self.sampled = sampled
        self.labels = labels
        self.positives = positives
        self.box_targets = box_targets
        self.rois = rois
        self.mask_targets = mask_targets


def mask_target(roi, gt_box, size=MASK_SIZE):
    """
    Rasterises `gt_box` onto a size x size grid laid over `roi`; a cell is 1 when its center is
    inside the box.
    """
    rx, ry, rw, rh = roi
    gx, gy, gw, gh = gt_box
    cx = rx + (np.arange(size) + 0.5) * rw / size
    cy = ry + (np.arange(size) + 0.5) * rh / size
    inside_x = (cx >= gx) & (cx <= gx + gw)
    inside_y = (cy >= gy) & (cy <= gy + gh)
    return (inside_y[:, None] & inside_x[None, :]).astype(np.float64)


def build_targets(anchors, gt_boxes, image_size, rng, anchors_per_image=ANCHORS_PER_IMAGE,
                  positive_fraction=POSITIVE_FRACTION, mask_rois=MASK_ROIS):
    """
    :param numpy.ndarray anchors: (K, 4) anchors as (cx, cy, w, h).
    :param gt_boxes: ground-truth boxes (x, y, w, h).
    :param tuple image_size: (width, height)
    :param numpy.random.Generator rng: drives the anchor sampling.
    :rtype: AnchorTargets
    """
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    labels, best = assign_anchors(anchors, gt)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), int(anchors_per_image * positive_fraction))
    pos = np.sort(rng.choice(pos, size=n_pos, replace=False)) if n_pos else pos[:0]
    n_neg = min(len(neg), anchors_per_image - n_pos)
    neg = np.sort(rng.choice(neg, size=n_neg, replace=False)) if n_neg else neg[:0]

    sampled = np.concatenate([pos, neg])
    cls_labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    box_targets = encode_boxes(anchors[pos], gt[best[pos]]) if len(pos) else np.zeros((0, 4))

    rois, masks = [], []
    width, height = image_size
    for g in gt:
        rois.append(tuple(g))
        masks.append(mask_target(g, g))
    for k in pos:
        if len(rois) >= mask_rois + len(gt):
            break
        roi = clip_box(anchors_to_boxes(anchors[k])[0], width, height)
        if roi[2] > 0 and roi[3] > 0:
            rois.append(roi)
            masks.append(mask_target(roi, gt[best[k]]))
    return AnchorTargets(sampled, cls_labels, pos, box_targets, rois,
                         np.stack(masks) if masks else np.zeros((0, MASK_SIZE, MASK_SIZE)))


def detector_loss(detector, enhanced, targets, backward=True, with_mask=True):
    """
    Evaluates the full detector loss for one image and, when `backward` is set, accumulates its
    gradient into every detector parameter.

    :returns: an OrderedDict with `cls`, `bbox`, `mask` and `total`.
    """
    x = _frame_array(enhanced)
    feature = backbone_forward(x, detector)
    scores, deltas = rpn_forward(feature, detector)

    n_sampled = max(len(targets.sampled), 1)
    cls_loss, d_cls = bce_with_grad(scores[targets.sampled], targets.labels)
    d_scores = np.zeros_like(scores)
    d_scores[targets.sampled] = d_cls / n_sampled
    cls_loss /= n_sampled

    d_deltas = np.zeros_like(deltas)
    box_loss = 0.0
    if len(targets.positives):
        n_pos = len(targets.positives)
        box_loss, d_box = bbox_loss_with_grad(deltas[targets.positives], targets.box_targets)
        box_loss /= n_pos
        d_deltas[targets.positives] = d_box / n_pos

    mask_loss = 0.0
    roi_layer = None
    if with_mask and targets.rois:
        roi_layer = RoiAlign(targets.rois, 1.0 / detector.stride)
        pooled = roi_layer.forward(feature)
        probs = detector.mask_head.forward(pooled)[:, 0]
        mask_loss, d_mask = bce_with_grad(probs, targets.mask_targets)
        mask_loss /= probs.size
        d_mask = d_mask / probs.size

    if backward:
        d_feature = rpn_backward(d_scores, d_deltas, feature.shape, detector)
        if roi_layer is not None:
            d_pooled = detector.mask_head.backward(d_mask[:, None])
            d_feature = d_feature + roi_layer.backward(d_pooled)
        detector.backbone.backward(d_feature)

    return collections.OrderedDict([
        ("cls", cls_loss),
        ("bbox", box_loss),
        ("mask", mask_loss),
        ("total", cls_loss + box_loss + mask_loss),
    ])


def _validate(samples):
    has_positive = False
    for i, (_, gt_boxes) in enumerate(samples):
        for box in gt_boxes:
            if len(box) != 4 or not np.all(np.isfinite(box)) or box[2] <= 0 or box[3] <= 0:
                raise chorus.exceptions.ArgumentError("sample {}: invalid ground-truth box {}".format(i, box))
            has_positive = True
    if not has_positive:
        raise chorus.exceptions.InvalidCorpusError("detector corpus has no ground-truth boxes, so no positive anchors")


def train_detector(samples, config=None, detector=None, run=None, with_mask=True):
    """
    :param list samples: (EnhancedFrame or (5, H, W) array, list of gt boxes) pairs.
    :param SgdConfig config: defaults to lr 0.0025, 12 epochs.
    :param Detector detector: optional network to continue from; a fresh one is seeded from
        `config.seed` otherwise.
    :param chorus.event.TrainingRun run: optional, receives the epoch events.
    :rtype: chorus.event.TrainingResult
    """
    config = config or SgdConfig()
    samples = list(samples)
    _validate(samples)
    detector = detector or Detector(seed=config.seed)
    run = run or chorus.event.TrainingRun("detector")
    optimizer = Sgd(detector.params(), config)
    rng = np.random.default_rng(config.seed)
    anchor_cache = {}

    for epoch in range(1, config.epochs + 1):
        run.start_epoch(epoch)
        order = rng.permutation(len(samples))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            for i in batch:
                enhanced, gt_boxes = samples[i]
                x = _frame_array(enhanced)
                height, width = x.shape[1:]
                if (height, width) not in anchor_cache:
                    grid = (-(-height // detector.stride), -(-width // detector.stride))
                    anchor_cache[(height, width)] = generate_anchors(
                        grid, detector.stride, detector.anchor_config.scales, detector.anchor_config.ratios)
                targets = build_targets(anchor_cache[(height, width)], gt_boxes, (width, height), rng)
                losses = detector_loss(detector, x, targets, with_mask=with_mask)
                run.record_step(losses["total"])
            optimizer.step(scale=1.0 / len(batch))
        mean = run.end_epoch(epoch)
        logger.info("detector epoch {}/{}: mean loss {:.5f}".format(epoch, config.epochs, mean))

    return chorus.event.TrainingResult(detector, run.history)
