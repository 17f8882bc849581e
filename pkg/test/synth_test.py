import os
import shutil
import tempfile
import unittest

import numpy as np
from PIL import Image

import chorus.exceptions
from chorus import SAMPLE_RATE, VIDEO_FPS
from chorus.data.fields import LISTENER, SPEAKER
from chorus.data.media import read_clip, read_image, write_clip, write_png
from chorus.data.synth import SynthConfig, mouth_bar, synth_scene


class SynthTest(unittest.TestCase):

    def test_deterministic(self):
        config = SynthConfig(persons=2, frames=10, image_size=64)
        a, b = synth_scene(11, config), synth_scene(11, config)
        assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
        assert np.array_equal(a.audio.samples, b.audio.samples)
        assert a.annotations == b.annotations
        assert not np.array_equal(a.frames[0], synth_scene(12, config).frames[0])

    def test_shapes(self):
        clip = synth_scene(0, SynthConfig(persons=3, frames=20, image_size=96))
        assert len(clip) == 20
        assert clip.frames[0].shape == (96, 96, 3) and clip.frames[0].dtype == np.uint8
        assert len(clip.audio.samples) == 20 * SAMPLE_RATE // VIDEO_FPS
        assert len(clip.annotations) == 60
        assert len(clip.identity) == 60
        assert clip.identity[0]["score"] is None

    def test_targets(self):
        clip = synth_scene(4, SynthConfig(persons=3, frames=6, image_size=128))
        for r in clip.annotations:
            assert r.head_box == clip.faces[r.person_id]
            if r.person_id == clip.speaker_id:
                assert r.label == SPEAKER
                assert r.target_box == clip.object_box
            else:
                assert r.label == LISTENER
                assert r.target_box == clip.faces[clip.speaker_id]

    def test_out_of_frame(self):
        clip = synth_scene(5, SynthConfig(persons=2, frames=6, image_size=64, out_of_frame=True))
        assert clip.speaker_id is None
        assert all(r.label == LISTENER and r.target_box == clip.object_box for r in clip.annotations)

    def test_mouth_follows_audio(self):
        clip = synth_scene(2, SynthConfig(persons=2, frames=50, image_size=256))
        hop = SAMPLE_RATE // VIDEO_FPS
        rms = np.sqrt(np.mean(clip.audio.samples.reshape(-1, hop) ** 2, axis=1))
        heights = clip.mouth_heights[clip.speaker_id]
        assert np.corrcoef(rms, heights)[0, 1] > 0.8

    def test_mouth_bar(self):
        assert mouth_bar((0, 0, 20, 20), 0.0) == (6, 15, 13, 15)
        x0, y0, x1, y1 = mouth_bar((0, 0, 20, 20), 1.0)
        assert y1 - y0 + 1 == 8

    def test_config(self):
        for kwargs in ({"persons": 0}, {"persons": 5}, {"frames": 4}, {"image_size": 16}):
            with self.assertRaises(chorus.exceptions.ArgumentError):
                SynthConfig(**kwargs)


class MediaTest(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_png(self):
        pixels = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
        path = os.path.join(self.directory, "a.png")
        write_png(path, pixels)
        assert np.array_equal(read_image(path), pixels)

    def test_ppm(self):
        pixels = np.random.default_rng(1).integers(0, 256, (4, 6, 3)).astype(np.uint8)
        path = os.path.join(self.directory, "a.ppm")
        Image.fromarray(pixels).save(path, format="PPM")
        assert np.array_equal(read_image(path), pixels)

    def test_grayscale_png(self):
        path = os.path.join(self.directory, "g.png")
        write_png(path, np.full((3, 3), 9, dtype=np.uint8))
        assert read_image(path).shape == (3, 3, 3)

    def test_bad_signature(self):
        path = os.path.join(self.directory, "a.png")
        with open(path, "wb") as f:
            f.write(b"GIF89a\x00\x00\x00\x00")
        with self.assertRaises(chorus.exceptions.FormatError) as ctx:
            read_image(path)
        assert ctx.exception.field == "signature"

    def test_bad_pixels(self):
        with self.assertRaises(chorus.exceptions.ShapeError):
            write_png(os.path.join(self.directory, "a.png"), np.zeros((3, 3, 4), dtype=np.uint8))

    def test_clip(self):
        clip = synth_scene(1, SynthConfig(persons=2, frames=5, image_size=32))
        write_clip(self.directory, clip)
        loaded = read_clip(self.directory)
        assert loaded.video == clip.video
        assert all(np.array_equal(a, b) for a, b in zip(loaded.frames, clip.frames))
        assert len(loaded.frames) == 5
        assert loaded.annotations == clip.annotations
        assert [dict(r) for r in loaded.identity] == [dict(r) for r in clip.identity]
        assert np.max(np.abs(loaded.audio.samples - clip.audio.samples)) < 1e-3
        assert [t.person_id for t in loaded.face_tracks()] == [1, 2]
        assert loaded.face_tracks()[0].frames() == [0, 1, 2, 3, 4]
