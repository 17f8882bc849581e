"""
End-to-end gaze following over a clip: speaker identification from face tracks and audio,
identity maps, enhanced frames, gaze candidates and subject matching. Also the per-stage
training drivers the command line runs.
"""
import collections
import glob
import os

import numpy as np
from PIL import Image, ImageDraw

import chorus.exceptions
from chorus import get_logger
from chorus.audio import load_wav, mfcc_extract
from chorus.boxes import box_center, iou
from chorus.data import jsonl
from chorus.data.fields import LISTENER, SPEAKER
from chorus.data.media import Clip, read_image, write_png
from chorus.data.records import VgsDataset, read_vgs
from chorus.detector.network import BackboneConfig, Detector
from chorus.detector.train import train_detector
from chorus.enhance import build_identity_maps, enhance_frame
from chorus.evaluation import Detection, GroundTruth
from chorus.matcher import Matcher, match_subjects, pair_accuracy, sample_from_detections, train_matcher
from chorus.matcher import build_subject
from chorus.speaker import (SyncModel, build_sync_corpus, calibrate_threshold, classify_speakers, identity_rows,
                            pair_distances, train_sync)
from chorus.speaker import pair_accuracy as sync_pair_accuracy

logger = get_logger(__name__)

HEAD_COLOR = (255, 0, 0)
TARGET_COLOR = (0, 255, 0)
OVERLAY_WIDTH = 2
HOLDOUT_RATIO = 10


class FrameResult(object):

    def __init__(self, frame, labels, candidates, matches, subjects):
        self.frame = frame
        self.labels = labels
        self.candidates = candidates
        self.matches = matches
        self.subjects = subjects

    def target_of(self, match):
        return None if match.empty else self.candidates[match.index].box


class PipelineResult(object):
    """
    :ivar str video:
    :ivar list frames: FrameResults in frame order.
    :ivar dict paths: output name -> written path.
    """

    def __init__(self, video, frames, paths=None):
        self.video = video
        self.frames = frames
        self.paths = paths or {}

    def detections(self):
        """
        Every subject's chosen target as an evaluation Detection keyed (video, frame, person id).
        """
        out = []
        for fr in self.frames:
            for m in fr.matches:
                if not m.empty:
                    out.append(Detection((self.video, fr.frame, m.person_id), fr.target_of(m), m.probability))
        return out


def require_checkpoint(config, stage):
    path = config.checkpoint(stage)
    if not os.path.exists(path):
        raise chorus.exceptions.MissingCheckpointError(stage, path)
    return path


def read_config_clip(config):
    """
    The clip named by the config's frames, audio and annotation paths.

    :rtype: chorus.data.media.Clip
    """
    paths = sorted(glob.glob(os.path.join(config.frames_dir, "*.png")) +
                   glob.glob(os.path.join(config.frames_dir, "*.ppm")))
    frames = [read_image(p) for p in paths]
    audio = load_wav(config.audio_path)
    annotations = read_vgs(config.annotations_path) if os.path.exists(config.annotations_path) else VgsDataset()
    videos = list(annotations.headers)
    video = videos[0] if videos else os.path.basename(os.path.normpath(config.clip_dir))
    return Clip(video, frames, audio, annotations)


def frame_maps(labels, tracks, frame, height, width):
    speakers, listeners = [], []
    for lab in labels:
        box = tracks[lab.person_id].box_at(frame)
        (speakers if lab.label == SPEAKER else listeners).append(box)
    return build_identity_maps(speakers, listeners, height, width)


def enhanced_frame(pixels, speaker_boxes, listener_boxes, no_audio=False):
    height, width = pixels.shape[:2]
    enhanced = enhance_frame(pixels, build_identity_maps(speaker_boxes, listener_boxes, height, width))
    return enhanced.without_identity() if no_audio else enhanced


def draw_overlay(pixels, result):
    """
    Red head boxes and green target boxes of every matched subject.
    """
    img = Image.fromarray(np.asarray(pixels, dtype=np.uint8))
    draw = ImageDraw.Draw(img)
    by_id = {s.person_id: s for s in result.subjects}
    for m in result.matches:
        subject = by_id[m.person_id]
        x, y, w, h = subject.head_box
        draw.rectangle([x, y, x + max(w - 1, 0), y + max(h - 1, 0)], outline=HEAD_COLOR, width=OVERLAY_WIDTH)
        target = result.target_of(m)
        if target is not None:
            tx, ty, tw, th = target
            draw.rectangle([tx, ty, tx + max(tw - 1, 0), ty + max(th - 1, 0)], outline=TARGET_COLOR,
                           width=OVERLAY_WIDTH)
    return np.asarray(img, dtype=np.uint8)


def render_heatmap(candidates, probabilities, height, width):
    """
    Sum of one Gaussian per candidate, centered on its box with sigma a quarter of the box size
    and weighted by the match probability; scaled so the peak is 1.

    :returns: (height, width) array in [0, 1].
    """
    heat = np.zeros((height, width))
    rows = np.arange(height) + 0.5
    cols = np.arange(width) + 0.5
    for c, p in zip(candidates, probabilities):
        cx, cy = box_center(c.box)
        sx = max(c.box[2] / 4.0, 1.0)
        sy = max(c.box[3] / 4.0, 1.0)
        gy = np.exp(-0.5 * ((rows - cy) / sy) ** 2)
        gx = np.exp(-0.5 * ((cols - cx) / sx) ** 2)
        heat += p * np.outer(gy, gx)
    peak = heat.max()
    return heat / peak if peak > 0 else heat


def heatmap_overlay(pixels, heat):
    base = np.asarray(pixels, dtype=np.float64)
    tint = np.array(HEAD_COLOR, dtype=np.float64)
    alpha = 0.6 * heat[..., None]
    return np.round(base * (1.0 - alpha) + tint * alpha).astype(np.uint8)


def frame_subjects(frame_labels, tracks, t, detections):
    subjects = []
    for lab in frame_labels:
        try:
            subjects.append(build_subject(lab.person_id, lab.label, tracks[lab.person_id].box_at(t),
                                          detections.feature, detections.stride, detections.image_size))
        except chorus.exceptions.SkipPerson as e:
            logger.warning("frame {}: skipping person {}: {}".format(t, lab.person_id, e))
    return subjects


def infer_clip(clip, sync, detector, matcher, config):
    """
    Runs every stage over the frames of `clip`.

    :rtype: PipelineResult
    """
    tau = config.tau if config.tau is not None else sync.tau
    tracks = collections.OrderedDict((t.person_id, t) for t in clip.face_tracks())
    frames = []
    if not clip.frames:
        return PipelineResult(clip.video, frames)

    labels = {}
    if tracks:
        stream = mfcc_extract(clip.audio)
        labels = classify_speakers(list(tracks.values()), clip.frames, stream, sync, tau)

    detect_config = config.detect_config()
    for t, pixels in enumerate(clip.frames):
        try:
            frame_labels = labels.get(t, [])
            height, width = pixels.shape[:2]
            enhanced = enhance_frame(pixels, frame_maps(frame_labels, tracks, t, height, width))
            if config.no_audio:
                enhanced = enhanced.without_identity()
            detections = detector.run(enhanced, detect_config)
            subjects = frame_subjects(frame_labels, tracks, t, detections)
            matches = match_subjects(subjects, detections.candidates, matcher, detections.image_size)
        except chorus.exceptions.ChorusError as e:
            logger.error("{}: frame {}: {}".format(clip.video, t, e))
            e.frame = t
            raise
        frames.append(FrameResult(t, frame_labels, detections.candidates, matches, subjects))
    return PipelineResult(clip.video, frames)


def write_outputs(result, clip, config):
    """
    identity.jsonl, detections.jsonl, matches.jsonl and the overlay PNGs (plus heat maps when
    configured) under the output directory.
    """
    out = config.output_dir
    labels = collections.OrderedDict((fr.frame, fr.labels) for fr in result.frames)
    detection_rows = [jsonl.row(jsonl.DETECTION_KEYS, result.video, fr.frame, list(c.box), c.score)
                      for fr in result.frames for c in fr.candidates]
    match_rows = [jsonl.row(jsonl.MATCH_KEYS, result.video, fr.frame, m.person_id,
                            None if m.empty else list(fr.target_of(m)), m.probability)
                  for fr in result.frames for m in fr.matches]
    paths = collections.OrderedDict([
        ("identity", os.path.join(out, "identity.jsonl")),
        ("detections", os.path.join(out, "detections.jsonl")),
        ("matches", os.path.join(out, "matches.jsonl")),
    ])
    jsonl.write_jsonl(paths["identity"], identity_rows(result.video, labels))
    jsonl.write_jsonl(paths["detections"], detection_rows)
    jsonl.write_jsonl(paths["matches"], match_rows)
    for fr in result.frames:
        pixels = clip.frames[fr.frame]
        write_png(os.path.join(out, "overlays", "{:06d}.png".format(fr.frame)), draw_overlay(pixels, fr))
        if config.heatmaps:
            for m in fr.matches:
                if m.empty:
                    continue
                heat = render_heatmap(fr.candidates, m.probabilities, *pixels.shape[:2])
                write_png(os.path.join(out, "heatmaps", "{:06d}_p{}.png".format(fr.frame, m.person_id)),
                          heatmap_overlay(pixels, heat))
    result.paths = paths
    return paths


def run_pipeline(config, clip=None):
    """
    Loads the three checkpoints, runs every stage over the clip and writes the outputs.

    :param chorus.config.PipelineConfig config:
    :param Clip clip: defaults to the clip the config's paths name.
    :raises MissingCheckpointError: naming the first stage without a checkpoint.
    :rtype: PipelineResult
    """
    sync = SyncModel.load(require_checkpoint(config, "sync"))
    detector = Detector.load(require_checkpoint(config, "detector"))
    matcher = Matcher.load(require_checkpoint(config, "matcher"))
    if bool(detector.meta.get("no_audio", False)) != bool(config.no_audio):
        logger.warning("detector was trained with no_audio={} but runs with no_audio={}".format(
            detector.meta.get("no_audio", False), config.no_audio))
    clip = clip if clip is not None else read_config_clip(config)
    result = infer_clip(clip, sync, detector, matcher, config)
    write_outputs(result, clip, config)
    logger.info("{}: {} frames, {} matches".format(
        clip.video, len(result.frames), sum(len(fr.matches) for fr in result.frames)))
    return result


def ground_truths(annotations):
    return [GroundTruth(r.key, r.target_box) for r in annotations]


# training drivers

class StageReport(object):

    def __init__(self, stage, history, metrics=None, path=None):
        self.stage = stage
        self.history = history
        self.metrics = collections.OrderedDict(metrics or {})
        self.path = path

    def to_dict(self):
        return collections.OrderedDict([
            ("stage", self.stage),
            ("history", self.history),
            ("metrics", self.metrics),
            ("checkpoint", self.path),
        ])


def _identity_labels(clip):
    return {(r["frame"], r["person_id"]): r["label"] for r in clip.identity}


def _holdout(n, seed):
    order = np.random.default_rng(seed).permutation(n)
    n_hold = max(1, (n + HOLDOUT_RATIO // 2) // HOLDOUT_RATIO) if n >= 2 else 0
    return sorted(order[n_hold:]), sorted(order[:n_hold])


def train_sync_stage(clips, config, run=None):
    """
    Trains the embedders on 90% of the clips' sync pairs and calibrates tau on the rest.
    """
    streams = [mfcc_extract(c.audio) for c in clips]
    pairs = build_sync_corpus(clips, streams, seed=config.seed)
    train_idx, hold_idx = _holdout(len(pairs), config.seed)
    train_pairs = [pairs[i] for i in train_idx]
    held = [pairs[i] for i in hold_idx]
    sgd = config.sgd("sync")
    result = train_sync(train_pairs, sgd, run=run)
    model = result.model
    d, y = pair_distances(model, held)
    if not (np.any(y == 1) and np.any(y == 0)):
        d, y = pair_distances(model, train_pairs)
    model.tau = calibrate_threshold(d[y == 1], d[y == 0])
    path = config.checkpoint("sync")
    model.save(path, config=sgd.to_dict())
    metrics = [("tau", model.tau), ("pair_accuracy", sync_pair_accuracy(d, y, model.tau)), ("pairs", len(pairs))]
    return StageReport("sync", result.history, metrics, path)


def frame_targets(records, mode):
    """
    The distinct target boxes of a frame's records; with mode `listeners` only those of
    listener records.
    """
    boxes = []
    for r in records:
        if mode == "listeners" and r.label != LISTENER:
            continue
        if r.target_box[2] > 0 and r.target_box[3] > 0 and r.target_box not in boxes:
            boxes.append(r.target_box)
    return boxes


def detector_samples(clips, config):
    """
    (EnhancedFrame, target boxes) for every `train.frame_stride`-th annotated frame, with
    identity maps from the ground-truth labels.
    """
    samples = []
    for clip in clips:
        truth = _identity_labels(clip)
        by_frame = clip.annotations.by_frame()
        for (video, t), records in by_frame.items():
            if t % config.train_frame_stride or t >= len(clip.frames):
                continue
            targets = frame_targets(records, config["detector.targets"])
            if not targets:
                continue
            speakers = [r.head_box for r in records if truth.get((t, r.person_id), r.label) == SPEAKER]
            listeners = [r.head_box for r in records if truth.get((t, r.person_id), r.label) != SPEAKER]
            samples.append((enhanced_frame(clip.frames[t], speakers, listeners, config.no_audio), targets))
    return samples


def top1_hit_rate(detector, samples, config):
    """
    Share of samples whose best candidate has IoU >= 0.5 with one of its target boxes.
    """
    if not samples:
        return 0.0
    hits = 0
    for enhanced, targets in samples:
        candidates = detector.run(enhanced, config.detect_config()).candidates
        if candidates and any(iou(candidates[0].box, t) >= 0.5 for t in targets):
            hits += 1
    return hits / float(len(samples))


def train_detector_stage(clips, config, holdout=(), run=None):
    samples = detector_samples(clips, config)
    sgd = config.sgd("detector")
    backbone = BackboneConfig(config.backbone)
    detector = Detector(backbone, config.anchor_config(backbone.stride), seed=sgd.seed)
    result = train_detector(samples, sgd, detector=detector, run=run)
    path = config.checkpoint("detector")
    result.model.save(path, meta={"stage": "detector", "no_audio": bool(config.no_audio),
                                  "targets": config["detector.targets"]}, config=sgd.to_dict())
    metrics = [("samples", len(samples))]
    if holdout:
        metrics.append(("top1_hit_rate", top1_hit_rate(result.model, detector_samples(holdout, config), config)))
    return StageReport("detector", result.history, metrics, path)


def matcher_samples(clips, detector, config):
    """
    MatchSamples of every `train.frame_stride`-th annotated frame, with candidates from the
    frozen detector and ground-truth identity labels.
    """
    samples = []
    detect_config = config.detect_config()
    for clip in clips:
        truth = _identity_labels(clip)
        for (video, t), records in clip.annotations.by_frame().items():
            if t % config.train_frame_stride or t >= len(clip.frames):
                continue
            labels = {r.person_id: truth.get((t, r.person_id), r.label) for r in records}
            speakers = [r.head_box for r in records if labels[r.person_id] == SPEAKER]
            listeners = [r.head_box for r in records if labels[r.person_id] != SPEAKER]
            detections = detector.run(enhanced_frame(clip.frames[t], speakers, listeners, config.no_audio),
                                      detect_config)
            samples.append(sample_from_detections(detections, records, labels))
    return samples


def train_matcher_stage(clips, config, holdout=(), run=None):
    detector = Detector.load(require_checkpoint(config, "detector"))
    samples = matcher_samples(clips, detector, config)
    sgd = config.sgd("matcher")
    matcher = Matcher(channels=detector.backbone_config.out_channels, seed=sgd.seed)
    result = train_matcher(samples, sgd, matcher=matcher, run=run)
    path = config.checkpoint("matcher")
    result.model.save(path, config=sgd.to_dict())
    metrics = [("samples", len(samples))]
    if holdout:
        metrics.append(("pair_accuracy", pair_accuracy(result.model, matcher_samples(holdout, detector, config))))
    return StageReport("matcher", result.history, metrics, path)
