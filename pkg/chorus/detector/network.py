"""
The gaze-candidate network: a small strided CNN backbone over enhanced frames, a region
proposal head (objectness + box deltas per anchor), ROIAlign and a fully convolutional mask
head.
"""
import collections

import numpy as np

import chorus.exceptions
from chorus import get_logger
from chorus.boxes import decode_boxes, nms
from chorus.detector.anchors import AnchorConfig, generate_anchors
from chorus.detector.roi import RoiAlign
from chorus.nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from chorus.nn.layers import Conv2d, ReLU, Sequential, Sigmoid, Upsample

logger = get_logger(__name__)

IN_CHANNELS = 5
MASK_SIZE = 28
MASK_CHANNELS = 16

PRESETS = collections.OrderedDict([
    ("tiny", {"channels": (8, 16, 32, 32), "deep": False}),
    ("deep", {"channels": (8, 16, 32, 32), "deep": True}),
    ("wide", {"channels": (16, 32, 64, 32), "deep": False}),
])


class BackboneConfig(object):
    """
    `tiny` is four 3x3 stride-2 conv blocks (8/16/32/32 channels); `deep` follows every block
    with a stride-1 3x3 conv; `wide` doubles the width of the first three blocks. All presets
    have stride 16 and 32 output channels.
    """

    def __init__(self, preset="tiny", channels=None, deep=None, in_channels=IN_CHANNELS):
        if preset not in PRESETS:
            raise chorus.exceptions.ArgumentError(
                "unknown backbone preset {!r}; expected one of {}".format(preset, ", ".join(PRESETS)))
        self.preset = preset
        self.channels = tuple(int(c) for c in (channels or PRESETS[preset]["channels"]))
        self.deep = PRESETS[preset]["deep"] if deep is None else bool(deep)
        self.in_channels = int(in_channels)

    @property
    def stride(self):
        return 2 ** len(self.channels)

    @property
    def out_channels(self):
        return self.channels[-1]

    def to_dict(self):
        return collections.OrderedDict([
            ("preset", self.preset),
            ("channels", list(self.channels)),
            ("deep", self.deep),
            ("in_channels", self.in_channels),
        ])

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class DetectConfig(object):

    def __init__(self, pre_nms_top_k=200, nms_iou=0.7, post_nms_top_k=20, min_size=1.0):
        self.pre_nms_top_k = int(pre_nms_top_k)
        self.nms_iou = float(nms_iou)
        self.post_nms_top_k = int(post_nms_top_k)
        self.min_size = float(min_size)


class GazeCandidate(object):
    """
    A detected box that may be some subject's gaze target.

    :ivar tuple box: (x, y, w, h) in pixels, clipped to the image.
    :ivar float score: objectness in [0, 1].
    :ivar numpy.ndarray mask: (28, 28) probabilities.
    :ivar numpy.ndarray feature: (C, 7, 7) ROIAlign-pooled feature.
    """

    def __init__(self, box, score, mask, feature):
        self.box = tuple(float(v) for v in box)
        self.score = float(score)
        self.mask = mask
        self.feature = feature

    @property
    def pooled(self):
        return self.feature.mean(axis=(1, 2))

    def __repr__(self):
        return "GazeCandidate(box={}, score={:.4f})".format(tuple(round(v, 2) for v in self.box), self.score)


class FrameDetections(object):
    """
    Everything `Detector.run` produces for one frame; the feature map is kept so that the
    matcher can pool subject head boxes from it.
    """

    def __init__(self, candidates, feature, image_size, stride):
        self.candidates = candidates
        self.feature = feature
        self.image_size = image_size
        self.stride = stride


def build_backbone(config, rng):
    layers = []
    c_in = config.in_channels
    for c_out in config.channels:
        layers += [Conv2d(c_in, c_out, 3, stride=2, padding=1, rng=rng), ReLU()]
        if config.deep:
            layers += [Conv2d(c_out, c_out, 3, stride=1, padding=1, rng=rng), ReLU()]
        c_in = c_out
    return Sequential(layers)


class Detector(object):

    def __init__(self, backbone_config=None, anchor_config=None, seed=0):
        self.backbone_config = backbone_config or BackboneConfig()
        self.anchor_config = anchor_config or AnchorConfig(stride=self.backbone_config.stride)
        if self.anchor_config.stride != self.backbone_config.stride:
            raise chorus.exceptions.ArgumentError("anchor stride {} != backbone stride {}".format(
                self.anchor_config.stride, self.backbone_config.stride))
        self.seed = seed
        self.meta = {}
        rng = np.random.default_rng(seed)
        c = self.backbone_config.out_channels
        a = self.anchor_config.per_cell
        self.backbone = build_backbone(self.backbone_config, rng)
        self.rpn_trunk = Sequential([Conv2d(c, c, 3, padding=1, rng=rng), ReLU()])
        self.rpn_cls = Sequential([Conv2d(c, a, 1, rng=rng), Sigmoid()])
        self.rpn_reg = Sequential([Conv2d(c, 4 * a, 1, rng=rng)])
        self.mask_head = Sequential([
            Conv2d(c, MASK_CHANNELS, 3, padding=1, rng=rng), ReLU(),
            Conv2d(MASK_CHANNELS, MASK_CHANNELS, 3, padding=1, rng=rng), ReLU(),
            Upsample(2), Upsample(2),
            Conv2d(MASK_CHANNELS, 1, 1, rng=rng), Sigmoid(),
        ])

    @property
    def stride(self):
        return self.backbone_config.stride

    def networks(self):
        return collections.OrderedDict([
            ("backbone", self.backbone),
            ("rpn_trunk", self.rpn_trunk),
            ("rpn_cls", self.rpn_cls),
            ("rpn_reg", self.rpn_reg),
            ("mask_head", self.mask_head),
        ])

    def params(self):
        out = collections.OrderedDict()
        for net_name, net in self.networks().items():
            for name, p in net.params().items():
                out["{}.{}".format(net_name, name)] = p
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def save(self, path, meta=None, config=None):
        meta = dict(meta or {})
        meta["backbone"] = self.backbone_config.to_dict()
        meta["anchors"] = self.anchor_config.to_dict()
        save_checkpoint(path, self.networks(), meta=meta, seed=self.seed, config=config)

    @classmethod
    def load(cls, path):
        checkpoint = path if isinstance(path, Checkpoint) else load_checkpoint(path)
        detector = cls.__new__(cls)
        detector.backbone_config = BackboneConfig.from_dict(checkpoint.meta["backbone"])
        detector.anchor_config = AnchorConfig(**checkpoint.meta["anchors"])
        detector.seed = checkpoint.seed
        for name, net in checkpoint.networks.items():
            setattr(detector, name, net)
        detector.meta = checkpoint.meta
        return detector

    def run(self, enhanced, config=None):
        """
        backbone -> anchors -> rpn -> decode -> top-k -> NMS -> top-k -> ROIAlign -> mask.

        :rtype: FrameDetections
        """
        config = config or DetectConfig()
        x = _frame_array(enhanced)
        height, width = x.shape[1:]
        feature = backbone_forward(x, self)
        scores, deltas = rpn_forward(feature, self)
        anchors = generate_anchors(feature.shape[2:], self.stride, self.anchor_config.scales,
                                   self.anchor_config.ratios)
        boxes = decode_boxes(anchors, deltas, image_size=(width, height))

        valid = np.flatnonzero((boxes[:, 2] >= config.min_size) & (boxes[:, 3] >= config.min_size))
        order = valid[np.argsort(-scores[valid], kind='stable')][:config.pre_nms_top_k]
        kept = [order[i] for i in nms(boxes[order], scores[order], config.nms_iou)][:config.post_nms_top_k]

        candidates = []
        if kept:
            pooled = RoiAlign([boxes[k] for k in kept], 1.0 / self.stride).forward(feature)
            masks = fcn_mask(pooled, self)
            for i, k in enumerate(kept):
                candidates.append(GazeCandidate(boxes[k], scores[k], masks[i], pooled[i]))
        return FrameDetections(candidates, feature[0], (width, height), self.stride)


def _frame_array(enhanced):
    x = getattr(enhanced, 'data', enhanced)
    return np.asarray(x, dtype=np.float64)


def backbone_forward(enhanced, detector):
    """
    :param enhanced: an EnhancedFrame or a (5, H, W) array.
    :returns: (1, C, ceil(H / stride), ceil(W / stride)) feature map.
    """
    x = _frame_array(enhanced)
    if x.ndim != 3 or x.shape[0] != detector.backbone_config.in_channels:
        raise chorus.exceptions.ShapeError("backbone expects a ({}, H, W) frame, got {}".format(
            detector.backbone_config.in_channels, x.shape))
    if x.shape[1] < detector.stride or x.shape[2] < detector.stride:
        raise chorus.exceptions.ArgumentError("frame {}x{} is smaller than the backbone stride {}".format(
            x.shape[1], x.shape[2], detector.stride))
    return detector.backbone.forward(x[None])


def rpn_forward(feature, detector):
    """
    :param numpy.ndarray feature: (1, C, gh, gw)
    :returns: (scores (K,), deltas (K, 4)) in `generate_anchors` order.
    """
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 4 or feature.shape[0] != 1:
        raise chorus.exceptions.ShapeError("rpn expects a (1, C, H, W) feature map, got {}".format(feature.shape))
    a = detector.anchor_config.per_cell
    _, _, gh, gw = feature.shape
    trunk = detector.rpn_trunk.forward(feature)
    scores = detector.rpn_cls.forward(trunk).transpose(0, 2, 3, 1).reshape(-1)
    deltas = detector.rpn_reg.forward(trunk).reshape(1, a, 4, gh, gw).transpose(0, 3, 4, 1, 2).reshape(-1, 4)
    return scores, deltas


def rpn_backward(d_scores, d_deltas, feature_shape, detector):
    """
    Backward of `rpn_forward`; must follow it directly.

    :returns: gradient w.r.t. the feature map.
    """
    a = detector.anchor_config.per_cell
    _, _, gh, gw = feature_shape
    ds = np.asarray(d_scores).reshape(1, gh, gw, a).transpose(0, 3, 1, 2)
    dd = np.asarray(d_deltas).reshape(1, gh, gw, a, 4).transpose(0, 3, 4, 1, 2).reshape(1, 4 * a, gh, gw)
    d_trunk = detector.rpn_cls.backward(ds) + detector.rpn_reg.backward(dd)
    return detector.rpn_trunk.backward(d_trunk)


def fcn_mask(pooled, detector):
    """
    :param numpy.ndarray pooled: (R, C, 7, 7) ROI features.
    :returns: (R, 28, 28) mask probabilities.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim == 3:
        pooled = pooled[None]
    c = detector.backbone_config.out_channels
    if pooled.ndim != 4 or pooled.shape[1] != c:
        raise chorus.exceptions.ShapeError("mask head expects (R, {}, 7, 7) features, got {}".format(c, pooled.shape))
    return detector.mask_head.forward(pooled)[:, 0]


def detect(enhanced, detector, config=None):
    """
    :returns: GazeCandidates sorted by descending objectness.
    :rtype: list
    """
    return detector.run(enhanced, config).candidates
