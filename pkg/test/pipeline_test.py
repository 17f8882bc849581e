import glob
import os
import shutil
import tempfile
import unittest

import mock
import numpy as np

import chorus.exceptions
import chorus.pipeline
from chorus.audio import AudioTrack
from chorus.config import PipelineConfig
from chorus.data.fields import LISTENER, SPEAKER
from chorus.data.jsonl import read_jsonl
from chorus.data.media import Clip
from chorus.data.records import VgsDataset, VgsRecord
from chorus.data.synth import SynthConfig, synth_scene
from chorus.detector import GazeCandidate
from chorus.matcher import MatchResult, Matcher, SubjectDescriptor
from chorus.pipeline import (FrameResult, draw_overlay, frame_targets, infer_clip, render_heatmap, run_pipeline,
                             train_detector_stage, train_matcher_stage, train_sync_stage)


def candidate(box, score=0.9):
    return GazeCandidate(box, score, np.zeros((28, 28)), np.zeros((32, 7, 7)))


class RenderTest(unittest.TestCase):

    def test_heatmap_peak(self):
        heat = render_heatmap([candidate((10, 10, 8, 8)), candidate((40, 40, 8, 8))], [1.0, 0.25], 64, 64)
        assert heat.shape == (64, 64)
        assert abs(heat.max() - 1.0) < 1e-12
        row, col = np.unravel_index(np.argmax(heat), heat.shape)
        assert row in (13, 14) and col in (13, 14)
        assert heat[43, 43] < 0.3
        assert heat.min() >= 0.0

    def test_heatmap_without_candidates(self):
        assert not render_heatmap([], [], 8, 8).any()

    def test_overlay(self):
        pixels = np.zeros((32, 32, 3), dtype=np.uint8)
        subject = SubjectDescriptor(1, 0, np.zeros(32), (2, 2, 10, 10), (32, 32))
        result = FrameResult(0, [], [candidate((20, 20, 8, 8))], [MatchResult(1, [0.8])], [subject])
        out = draw_overlay(pixels, result)
        assert tuple(out[2, 5]) == (255, 0, 0)
        assert tuple(out[20, 24]) == (0, 255, 0)
        assert tuple(out[16, 16]) == (0, 0, 0)
        assert not pixels.any()

    def test_frame_targets(self):
        clip = synth_scene(0, SynthConfig(persons=3, frames=5, image_size=64))
        records = clip.annotations.by_frame()[(clip.video, 0)]
        assert sorted(frame_targets(records, "all")) == sorted([clip.object_box, clip.faces[clip.speaker_id]])
        assert frame_targets(records, "listeners") == [clip.faces[clip.speaker_id]]


class PipelineTest(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.clip = synth_scene(0, SynthConfig(persons=2, frames=8, image_size=64))
        self.config = PipelineConfig(checkpoint_dir=os.path.join(self.directory, "checkpoints"),
                                     output_dir=os.path.join(self.directory, "out"), tau=10.0,
                                     **{"sync.epochs": 1, "detector.epochs": 0, "train.frame_stride": 2,
                                        "anchor.scales_px": (16.0, 32.0)})

    def tearDown(self):
        shutil.rmtree(self.directory)

    def train(self):
        sync = train_sync_stage([self.clip], self.config)
        detector = train_detector_stage([self.clip], self.config)
        Matcher(channels=32, seed=0).save(self.config.checkpoint("matcher"))
        return sync, detector

    def test_missing_checkpoint(self):
        with self.assertRaises(chorus.exceptions.MissingCheckpointError) as ctx:
            run_pipeline(self.config, self.clip)
        assert ctx.exception.stage == "sync"
        with self.assertRaises(chorus.exceptions.MissingCheckpointError) as ctx:
            train_matcher_stage([self.clip], self.config)
        assert ctx.exception.stage == "detector"

    def test_empty_clip(self):
        clip = Clip("empty", [], AudioTrack(np.zeros(0)), VgsDataset())
        result = infer_clip(clip, None, None, None, self.config)
        assert result.frames == []
        assert result.detections() == []

    def test_stage_reports(self):
        sync, detector = self.train()
        assert sync.stage == "sync" and len(sync.history) == 1
        assert sync.metrics["tau"] > 0
        assert sync.metrics["pairs"] == 8
        assert os.path.exists(sync.path)
        assert detector.history == []
        assert detector.metrics["samples"] == 4
        assert detector.to_dict()["checkpoint"] == self.config.checkpoint("detector")

    def test_run(self):
        self.train()
        result = run_pipeline(self.config, self.clip)
        assert [fr.frame for fr in result.frames] == list(range(8))
        for fr in result.frames:
            assert [lab.person_id for lab in fr.labels] == [1, 2]
            assert sorted(lab.label for lab in fr.labels) == [LISTENER, SPEAKER]
            assert [m.person_id for m in fr.matches] == [1, 2]

        matches = read_jsonl(result.paths["matches"])
        assert len(matches) == 16
        assert list(matches[0]) == ["video", "frame", "person_id", "target_box", "probability"]
        assert len(read_jsonl(result.paths["identity"])) == 16
        assert len(glob.glob(os.path.join(self.config.output_dir, "overlays", "*.png"))) == 8
        assert not os.path.exists(os.path.join(self.config.output_dir, "heatmaps"))
        assert len(result.detections()) == sum(1 for m in matches if m["target_box"] is not None)

    def test_deterministic(self):
        self.train()
        run_pipeline(self.config, self.clip)
        with open(os.path.join(self.config.output_dir, "matches.jsonl")) as f:
            first = f.read()
        run_pipeline(self.config, self.clip)
        with open(os.path.join(self.config.output_dir, "matches.jsonl")) as f:
            assert f.read() == first

    def test_no_audio_mismatch_warns(self):
        self.train()
        with mock.patch.object(chorus.pipeline.logger, "warning") as warning:
            run_pipeline(self.config.replace(no_audio=True), self.clip)
        assert any("no_audio" in call[0][0] for call in warning.call_args_list)

    def test_zero_area_head_box_is_skipped(self):
        self.train()
        records = []
        for r in self.clip.annotations:
            d = r.to_dict()
            if r.frame == 3 and r.person_id == 2:
                d["head_box"] = [d["head_box"][0], d["head_box"][1], 0, d["head_box"][3]]
            records.append(VgsRecord.from_dict(d))
        annotations = VgsDataset(records, self.clip.annotations.headers)
        clip = Clip(self.clip.video, self.clip.frames, self.clip.audio, annotations)
        with mock.patch.object(chorus.pipeline.logger, "warning") as warning:
            result = run_pipeline(self.config, clip)
        assert [fr.frame for fr in result.frames] == list(range(8))
        assert [m.person_id for m in result.frames[3].matches] == [1]
        assert [m.person_id for m in result.frames[4].matches] == [1, 2]
        assert any("skipping person 2" in call[0][0] for call in warning.call_args_list)

    def test_frame_error_names_frame(self):
        self.train()
        with mock.patch("chorus.pipeline.match_subjects", side_effect=chorus.exceptions.ShapeError("bad")):
            with self.assertRaises(chorus.exceptions.ShapeError) as ctx:
                run_pipeline(self.config, self.clip)
        assert ctx.exception.frame == 0
