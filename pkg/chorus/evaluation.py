"""
Average precision over gaze-target boxes: IoU-gated greedy matching, the M-point interpolated
precision-recall curve, and the with/without identity-map ablation report.
"""
import collections
import json

import numpy as np

import chorus.exceptions
from chorus import get_logger
from chorus.boxes import iou

logger = get_logger(__name__)

IOU_GATE = 0.5

Detection = collections.namedtuple('Detection', ['key', 'box', 'score'])


class GroundTruth(collections.namedtuple('GroundTruth', ['key', 'box'])):
    """
    One ground-truth target box. `key` identifies the frame (or the (frame, subject) pair the
    box belongs to); detections are only matched against boxes with the same key.
    """
    __slots__ = ()


def sort_detections(detections):
    """
    Descending score; equal scores keep their input order.
    """
    return sorted(detections, key=lambda d: -d.score)


def match_detections(detections, ground_truths, iou_gate=IOU_GATE):
    """
    Greedy matching in descending-score order: a detection is a true positive iff its IoU with
    some still unmatched ground truth of the same key is >= `iou_gate`. When several qualify,
    the one with the highest IoU is taken (the first of them on ties).

    :returns: (sorted detections, list of bool flags)
    """
    for d in detections:
        if not np.isfinite(d.score):
            raise chorus.exceptions.ArgumentError("detection {} has a non-finite score".format(d.key))
    by_key = collections.defaultdict(list)
    for gt in ground_truths:
        by_key[gt.key].append(gt.box)
    used = {key: [False] * len(boxes) for key, boxes in by_key.items()}

    ranked = sort_detections(detections)
    flags = []
    for d in ranked:
        best, best_iou = None, iou_gate
        for j, box in enumerate(by_key.get(d.key, ())):
            if used[d.key][j]:
                continue
            overlap = iou(d.box, box)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = j, overlap
        if best is None:
            flags.append(False)
        else:
            used[d.key][best] = True
            flags.append(True)
    return ranked, flags


class PrCurve(object):
    """
    :ivar list points: (recall, precision) after every ranked detection.
    :ivar list interpolated: max precision at recall >= k / M, k = 1..M.
    :ivar int m: number of positives.
    :ivar float ap: mean of `interpolated`.
    """

    def __init__(self, points, interpolated, m):
        self.points = points
        self.interpolated = interpolated
        self.m = m
        self.ap = float(np.mean(interpolated)) if interpolated else 0.0

    def to_dict(self):
        return collections.OrderedDict([
            ("ap", self.ap),
            ("pr", [[r, p] for r, p in self.points]),
            ("m", self.m),
        ])

    def __repr__(self):
        return "PrCurve(ap={:.4f}, m={})".format(self.ap, self.m)


def average_precision(flags, m):
    """
    :param flags: TP/FP flags of detections in descending-score order.
    :param int m: number of ground-truth positives.
    :rtype: PrCurve
    :raises UndefinedMetricError: when m == 0.
    """
    if m <= 0:
        raise chorus.exceptions.UndefinedMetricError("average precision is undefined without positives (M = 0)")
    points = []
    tp = 0
    # integer counts, so recall >= k / M is compared exactly
    counts = []
    for i, flag in enumerate(flags, start=1):
        tp += 1 if flag else 0
        counts.append((tp, i))
        points.append((tp / float(m), tp / float(i)))

    interpolated = []
    for k in range(1, m + 1):
        best = 0.0
        for hits, seen in counts:
            if hits >= k:
                best = max(best, hits / float(seen))
        interpolated.append(best)
    return PrCurve(points, interpolated, m)


def evaluate(detections, ground_truths, iou_gate=IOU_GATE):
    """
    match_detections followed by average_precision with M = number of ground truths.

    :rtype: PrCurve
    """
    ground_truths = list(ground_truths)
    _, flags = match_detections(detections, ground_truths, iou_gate)
    return average_precision(flags, len(ground_truths))


class AblationReport(object):

    def __init__(self, curve_a, curve_b, label_a="with_audio", label_b="without_audio"):
        self.curve_a = curve_a
        self.curve_b = curve_b
        self.label_a = label_a
        self.label_b = label_b

    @property
    def delta(self):
        return self.curve_a.ap - self.curve_b.ap

    def to_dict(self):
        return collections.OrderedDict([
            (self.label_a, self.curve_a.ap),
            (self.label_b, self.curve_b.ap),
            ("delta_ap", self.delta),
            ("m", self.curve_a.m),
        ])

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=False)

    def to_text(self):
        width = max(len(self.label_a), len(self.label_b), len("delta AP"))
        rows = [
            "{:<{w}}  {:.4f}".format(self.label_a, self.curve_a.ap, w=width),
            "{:<{w}}  {:.4f}".format(self.label_b, self.curve_b.ap, w=width),
            "{:<{w}}  {:+.4f}".format("delta AP", self.delta, w=width),
        ]
        return "\n".join(rows)


def ablation_report(run_a, run_b, ground_truths, iou_gate=IOU_GATE, label_a="with_audio", label_b="without_audio"):
    """
    AP of two detection runs over the same ground truth, and their difference AP_A - AP_B.
    Both runs are measured against the ground-truth frame set: a ground-truth key a run has no
    detection for counts as a miss of that run.

    :raises FrameMismatchError: when either run has detections for keys outside the ground truth.
    :rtype: AblationReport
    """
    run_a, run_b = list(run_a), list(run_b)
    ground_truths = list(ground_truths)
    covered = set(g.key for g in ground_truths)
    stray = set(d.key for d in run_a + run_b) - covered
    if stray:
        raise chorus.exceptions.FrameMismatchError(sorted(stray, key=str))
    return AblationReport(evaluate(run_a, ground_truths, iou_gate), evaluate(run_b, ground_truths, iou_gate),
                          label_a, label_b)
