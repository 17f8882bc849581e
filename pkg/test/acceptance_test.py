"""
End-to-end quality checks on synthetic scenes. They train every stage from scratch and take
minutes, so they only run with CHORUS_SLOW_TESTS=1.
"""
import os
import shutil
import tempfile
import unittest

import numpy as np

from chorus.audio import mfcc_extract
from chorus.config import PipelineConfig
from chorus.data.fields import SPEAKER
from chorus.data.synth import SynthConfig, synth_scene
from chorus.evaluation import ablation_report, evaluate
from chorus.pipeline import (ground_truths, run_pipeline, train_detector_stage,
                             train_matcher_stage, train_sync_stage)
from chorus.speaker import SyncModel, classify_speakers

SLOW = os.environ.get("CHORUS_SLOW_TESTS") == "1"


def scenes(first, n, frames=40, image_size=128, out_of_frame=False):
    return [synth_scene(first + i, SynthConfig(persons=2 + (first + i) % 3, frames=frames, image_size=image_size,
                                               out_of_frame=out_of_frame))
            for i in range(n)]


@unittest.skipUnless(SLOW, "set CHORUS_SLOW_TESTS=1 to run")
class SpeakerAccuracyTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.directory = tempfile.mkdtemp()
        cls.config = PipelineConfig(checkpoint_dir=cls.directory)
        cls.report = train_sync_stage(scenes(0, 20), cls.config)
        cls.model = SyncModel.load(cls.report.path)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.directory)

    def labels(self, clip):
        return classify_speakers(clip.face_tracks(), clip.frames, mfcc_extract(clip.audio), self.model)

    def test_loss_decreases(self):
        assert self.report.history[-1] < self.report.history[0]

    def test_speaker_accuracy(self):
        hits, total = 0, 0
        for clip in scenes(1000, 12):
            for frame_labels in self.labels(clip).values():
                speakers = [lab.person_id for lab in frame_labels if lab.label == SPEAKER]
                hits += int(speakers == [clip.speaker_id])
                total += 1
        assert hits >= 0.9 * total, (hits, total)

    def test_out_of_frame_speaker(self):
        hits, total = 0, 0
        for clip in scenes(2000, 6, out_of_frame=True):
            assert clip.speaker_id is None
            for frame_labels in self.labels(clip).values():
                hits += int(all(lab.label != SPEAKER for lab in frame_labels))
                total += 1
        assert hits >= 0.9 * total, (hits, total)


@unittest.skipUnless(SLOW, "set CHORUS_SLOW_TESTS=1 to run")
class EndToEndTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.directory = tempfile.mkdtemp()
        cls.train = scenes(0, 60, frames=20)
        cls.held = scenes(1000, 12, frames=20)
        cls.with_audio = cls.trained(PipelineConfig(
            checkpoint_dir=os.path.join(cls.directory, "with_audio"), output_dir=os.path.join(cls.directory, "out"),
            image_size_px=128, **{"detector.lr": 0.0025, "detector.epochs": 12, "train.frame_stride": 5}))
        cls.without_audio = cls.trained(cls.with_audio[0].replace(
            checkpoint_dir=os.path.join(cls.directory, "without_audio"), no_audio=True))

    @classmethod
    def trained(cls, config):
        sync = train_sync_stage(cls.train, config)
        detector = train_detector_stage(cls.train, config, holdout=cls.held)
        matcher = train_matcher_stage(cls.train, config)
        return config, sync, detector, matcher

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.directory)

    def detections(self, config):
        return [d for clip in self.held for d in run_pipeline(config, clip).detections()]

    def truths(self):
        return [g for clip in self.held for g in ground_truths(clip.annotations)]

    def test_losses_decrease(self):
        for report in self.with_audio[1:]:
            assert report.history[-1] < report.history[0], (report.stage, report.history)

    def test_detector_top1(self):
        assert self.with_audio[2].metrics["top1_hit_rate"] >= 0.9

    def test_average_precision_and_ablation(self):
        config_a, config_b = self.with_audio[0], self.without_audio[0]
        curve = evaluate(self.detections(config_a), self.truths())
        assert curve.ap >= 0.7, curve
        report = ablation_report(self.detections(config_a), self.detections(config_b), self.truths())
        assert report.delta >= 0.05, report.to_text()
        assert np.isclose(report.curve_a.ap, curve.ap)
