"""
Subject to gaze-candidate matching: an MLP scores every (subject, candidate) pair as an
independent binary decision and each subject takes its highest-probability candidate.
"""
import collections
import math

import numpy as np

import chorus.event
import chorus.exceptions
from chorus import get_logger
from chorus.boxes import box_center, iou
from chorus.data.fields import SPEAKER
from chorus.detector.roi import roi_align
from chorus.nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from chorus.nn.layers import Linear, ReLU, Sequential, Sigmoid
from chorus.nn.losses import bce_with_grad
from chorus.nn.optim import Sgd, SgdConfig

logger = get_logger(__name__)

HIDDEN = (64, 32)
GEOMETRY_DIMS = 4
POSITIVE_IOU = 0.5


class SubjectDescriptor(object):
    """
    :ivar int person_id:
    :ivar int identity: 1 for a speaker, 0 for a listener.
    :ivar numpy.ndarray feature: (C,) mean of the ROIAlign-pooled head box.
    :ivar tuple head_box: (x, y, w, h) in pixels.
    :ivar tuple normalized_box: (x / W, y / H, w / W, h / H).
    """

    def __init__(self, person_id, identity, feature, head_box, image_size):
        feature = np.asarray(feature, dtype=np.float64)
        if not np.all(np.isfinite(feature)):
            raise chorus.exceptions.ArgumentError("subject {} has a non-finite feature".format(person_id))
        width, height = image_size
        x, y, w, h = head_box
        self.person_id = person_id
        self.identity = int(identity)
        self.feature = feature
        self.head_box = tuple(float(v) for v in head_box)
        self.normalized_box = tuple(min(max(v, 0.0), 1.0) for v in (x / width, y / height, w / width, h / height))


def build_subject(person_id, label, head_box, feature_map, stride, image_size):
    """
    :param str label: `speaker` or `listener`.
    :param numpy.ndarray feature_map: (C, Hf, Wf) backbone output of the frame.
    :raises SkipPerson: when the head box has no area.
    :rtype: SubjectDescriptor
    """
    if head_box[2] <= 0 or head_box[3] <= 0:
        raise chorus.exceptions.SkipPerson("subject {} has a degenerate head box {}".format(person_id, head_box))
    pooled, _ = roi_align(feature_map, head_box, 1.0 / stride)
    return SubjectDescriptor(person_id, 1 if label == SPEAKER else 0, pooled.mean(axis=(1, 2)), head_box, image_size)


def pair_features(subject, candidate, image_size):
    """
    [subject feature (C), candidate feature (C), dx / W, dy / H, ln(w_c / w_s), ln(h_c / h_s),
    identity bit], where (dx, dy) is the candidate center minus the subject head center.

    :rtype: numpy.ndarray of length 2C + 5
    """
    sx, sy, sw, sh = subject.head_box
    cx, cy, cw, ch = candidate.box
    if sw <= 0 or sh <= 0:
        raise chorus.exceptions.ArgumentError(
            "subject {} has a degenerate head box {}".format(subject.person_id, subject.head_box))
    if cw <= 0 or ch <= 0:
        raise chorus.exceptions.ArgumentError("candidate box {} is degenerate".format(candidate.box))
    width, height = image_size
    (scx, scy), (ccx, ccy) = box_center(subject.head_box), box_center(candidate.box)
    geometry = [(ccx - scx) / width, (ccy - scy) / height, math.log(cw / sw), math.log(ch / sh)]
    return np.concatenate([subject.feature, candidate.pooled, geometry, [float(subject.identity)]])


def feature_dim(channels):
    return 2 * channels + GEOMETRY_DIMS + 1


class MatchResult(object):
    """
    :ivar int person_id:
    :ivar int index: chosen candidate (argmax, first on ties); None without candidates.
    :ivar float probability: its probability; None without candidates.
    :ivar numpy.ndarray probabilities: one per candidate.
    """

    def __init__(self, person_id, probabilities):
        self.person_id = person_id
        self.probabilities = np.asarray(probabilities, dtype=np.float64).reshape(-1)
        if len(self.probabilities):
            self.index = int(np.argmax(self.probabilities))
            self.probability = float(self.probabilities[self.index])
        else:
            self.index = None
            self.probability = None

    @property
    def empty(self):
        return self.index is None

    def __repr__(self):
        return "MatchResult(person_id={}, index={}, probability={})".format(self.person_id, self.index, self.probability)


class Matcher(object):

    def __init__(self, channels=32, seed=0):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.channels = channels
        dims = (feature_dim(channels),) + HIDDEN
        layers = []
        for d_in, d_out in zip(dims, dims[1:]):
            layers += [Linear(d_in, d_out, rng=rng), ReLU()]
        layers += [Linear(dims[-1], 1, rng=rng), Sigmoid()]
        self.mlp = Sequential(layers)

    def networks(self):
        return collections.OrderedDict([("mlp", self.mlp)])

    def params(self):
        return collections.OrderedDict(("mlp.{}".format(n), p) for n, p in self.mlp.params().items())

    def score(self, features):
        """
        :param numpy.ndarray features: (N, 2C + 5)
        :returns: (N,) probabilities.
        """
        features = np.asarray(features, dtype=np.float64).reshape(-1, feature_dim(self.channels))
        if not len(features):
            return np.zeros(0)
        return self.mlp.forward(features)[:, 0]

    def save(self, path, config=None):
        save_checkpoint(path, self.networks(), meta={"stage": "matcher", "channels": self.channels},
                        seed=self.seed, config=config)

    @classmethod
    def load(cls, path):
        checkpoint = path if isinstance(path, Checkpoint) else load_checkpoint(path)
        matcher = cls.__new__(cls)
        matcher.seed = checkpoint.seed
        matcher.channels = checkpoint.meta["channels"]
        matcher.mlp = checkpoint["mlp"]
        return matcher


def match_subjects(subjects, candidates, matcher, image_size):
    """
    :returns: one MatchResult per subject, in subject order. Without candidates every result
        is empty.
    """
    results = []
    for subject in subjects:
        if not candidates:
            results.append(MatchResult(subject.person_id, []))
            continue
        features = np.stack([pair_features(subject, c, image_size) for c in candidates])
        results.append(MatchResult(subject.person_id, matcher.score(features)))
    return results


class MatchSample(object):
    """
    The matcher's view of one training frame: subjects, detected candidates and every subject's
    ground-truth target box.
    """

    def __init__(self, subjects, candidates, targets, image_size):
        self.subjects = list(subjects)
        self.candidates = list(candidates)
        self.targets = dict(targets)
        self.image_size = image_size

    def pairs(self):
        """
        :returns: (features (N, 2C + 5), labels (N,)); label 1 iff IoU(candidate, target) >= 0.5.
        """
        features, labels = [], []
        for s in self.subjects:
            target = self.targets.get(s.person_id)
            for c in self.candidates:
                features.append(pair_features(s, c, self.image_size))
                labels.append(1.0 if target is not None and iou(c.box, target) >= POSITIVE_IOU else 0.0)
        if not features:
            return np.zeros((0, 0)), np.zeros(0)
        return np.stack(features), np.array(labels)


def _format_frame(record):
    return "{} frame {}".format(record.video, record.frame)


def sample_from_detections(detections, records, labels=None):
    """
    Builds a MatchSample from one frame's FrameDetections and its VGS records.

    :param dict labels: person id -> `speaker` / `listener`; defaults to the record labels.
    """
    subjects = []
    targets = {}
    for r in records:
        label = (labels or {}).get(r.person_id, r.label)
        try:
            subjects.append(build_subject(r.person_id, label, r.head_box, detections.feature, detections.stride,
                                          detections.image_size))
        except chorus.exceptions.SkipPerson as e:
            logger.warning("{}: {}".format(_format_frame(r), e))
            continue
        targets[r.person_id] = r.target_box
    return MatchSample(subjects, detections.candidates, targets, detections.image_size)


def pair_loss(matcher, features, labels, backward=True):
    """
    Mean BCE over pairs; accumulates gradients when `backward` is set.
    """
    probs = matcher.mlp.forward(features)[:, 0]
    loss, dp = bce_with_grad(probs, labels)
    n = float(len(labels))
    if backward:
        matcher.mlp.backward((dp / n)[:, None])
    return loss / n


def train_matcher(samples, config=None, matcher=None, run=None):
    """
    :param list samples: MatchSamples built with a frozen detector.
    :param SgdConfig config:
    :rtype: chorus.event.TrainingResult
    :raises InvalidCorpusError: when no pair is positive.
    """
    config = config or SgdConfig()
    data = [s.pairs() for s in samples]
    data = [(x, y) for x, y in data if len(y)]
    if not any(y.sum() > 0 for _, y in data):
        raise chorus.exceptions.InvalidCorpusError("matcher corpus has no positive pair")
    if matcher is None:
        channels = (data[0][0].shape[1] - GEOMETRY_DIMS - 1) // 2
        matcher = Matcher(channels=channels, seed=config.seed)
    run = run or chorus.event.TrainingRun("matcher")
    optimizer = Sgd(matcher.params(), config)
    rng = np.random.default_rng(config.seed)

    for epoch in range(1, config.epochs + 1):
        run.start_epoch(epoch)
        order = rng.permutation(len(data))
        for start in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[start:start + config.batch_size]]
            features = np.concatenate([x for x, _ in batch])
            labels = np.concatenate([y for _, y in batch])
            optimizer.zero_grad()
            run.record_step(pair_loss(matcher, features, labels))
            optimizer.step()
        mean = run.end_epoch(epoch)
        logger.info("matcher epoch {}/{}: mean loss {:.5f}".format(epoch, config.epochs, mean))
    return chorus.event.TrainingResult(matcher, run.history)


def pair_accuracy(matcher, samples, threshold=0.5):
    """
    Fraction of pairs whose probability falls on the side of `threshold` given by their label.
    """
    hits, total = 0, 0
    for s in samples:
        x, y = s.pairs()
        if not len(y):
            continue
        p = matcher.score(x)
        hits += int(np.sum((p >= threshold) == (y == 1)))
        total += len(y)
    return hits / float(total) if total else 0.0
