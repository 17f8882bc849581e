"""
Synthetic audio-visual conversation scenes with planted ground truth.

Every person is a flat-colored face rectangle with a dark mouth bar whose height follows a
smooth random envelope. The designated speaker's envelope also modulates a harmonic tone, which
is the clip's audio track; listeners get independent envelopes. Listeners look at the speaker's
face and the speaker looks at a fixed scene object.
"""
import collections

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter1d

import chorus.exceptions
from chorus import SAMPLE_RATE, VIDEO_FPS, get_logger
from chorus.audio import AudioTrack
from chorus.data.fields import LISTENER, SPEAKER
from chorus.data.jsonl import IDENTITY_KEYS, row
from chorus.data.media import Clip
from chorus.data.records import VgsDataset, VgsRecord, VideoHeader

logger = get_logger(__name__)

BACKGROUND = (48, 52, 60)
OBJECT_COLOR = (40, 170, 220)
MOUTH_COLOR = (70, 20, 25)
EYE_COLOR = (30, 30, 30)

FUNDAMENTAL_HZ = 150.0
HARMONICS = 5
ENVELOPE_SIGMA = 1.5  # video frames
AMPLITUDE_FLOOR = 0.05
AMPLITUDE_RANGE = 0.9
NOISE_LEVEL = 0.002


class SynthConfig(object):
    """
    :param int persons: people in the scene, 1 to 4.
    :param int frames: clip length in video frames (50 to 125 is 2 to 5 s).
    :param int image_size: square frame side in pixels.
    :param bool out_of_frame: the audio follows an envelope no visible person shares; everybody
        is a listener and looks at the scene object.
    """

    def __init__(self, persons=3, frames=75, image_size=256, out_of_frame=False, video=None):
        if not 1 <= persons <= 4:
            raise chorus.exceptions.ArgumentError("persons must be between 1 and 4, got {}".format(persons))
        if frames < 5:
            raise chorus.exceptions.ArgumentError("a clip needs at least 5 frames, got {}".format(frames))
        if image_size < 32:
            raise chorus.exceptions.ArgumentError("image size must be at least 32 px, got {}".format(image_size))
        self.persons = int(persons)
        self.frames = int(frames)
        self.image_size = int(image_size)
        self.out_of_frame = bool(out_of_frame)
        self.video = video

    def to_dict(self):
        return collections.OrderedDict([
            ("persons", self.persons),
            ("frames", self.frames),
            ("image_size", self.image_size),
            ("out_of_frame", self.out_of_frame),
            ("video", self.video),
        ])


class SyntheticClip(Clip):
    """
    A Clip plus the planted truth: the speaker's person id (None for out-of-frame voice), the
    face and object boxes, every person's mouth-bar heights in pixels and the audio envelope.
    """

    def __init__(self, video, frames, audio, annotations, identity, speaker_id, faces, object_box,
                 mouth_heights, audio_envelope):
        super(SyntheticClip, self).__init__(video, frames, audio, annotations, identity)
        self.speaker_id = speaker_id
        self.faces = faces
        self.object_box = object_box
        self.mouth_heights = mouth_heights
        self.audio_envelope = audio_envelope


def envelope(rng, n):
    """
    Band-limited random envelope in [0, 1]: smoothed Gaussian noise, min-max normalised.
    """
    e = gaussian_filter1d(rng.normal(size=n), ENVELOPE_SIGMA, mode='reflect')
    span = e.max() - e.min()
    return (e - e.min()) / span if span > 0 else np.full(n, 0.5)


def harmonic_tone(n, sample_rate=SAMPLE_RATE, f0=FUNDAMENTAL_HZ, harmonics=HARMONICS):
    t = np.arange(n) / float(sample_rate)
    tone = sum(np.sin(2 * np.pi * f0 * k * t) / k for k in range(1, harmonics + 1))
    peak = np.max(np.abs(tone)) if n else 1.0
    return tone / peak if peak > 0 else tone


def modulated_audio(env, rng, fps=VIDEO_FPS, sample_rate=SAMPLE_RATE):
    """
    A harmonic tone whose amplitude is 0.05 + 0.9 * env, the per-frame envelope linearly
    interpolated between frame centers.
    """
    n = int(round(len(env) * sample_rate / float(fps)))
    t = (np.arange(n) + 0.5) / sample_rate
    centers = (np.arange(len(env)) + 0.5) / fps
    amplitude = AMPLITUDE_FLOOR + AMPLITUDE_RANGE * np.interp(t, centers, env)
    samples = amplitude * harmonic_tone(n, sample_rate) + NOISE_LEVEL * rng.normal(size=n)
    return AudioTrack(np.clip(samples, -1.0, 1.0), sample_rate)


def _layout(rng, config):
    """
    Face boxes spread over the upper half in equal columns; the object sits in the lower part.
    """
    size = config.image_size
    face = int(round(size * 0.2))
    slot = size / float(config.persons)
    faces = collections.OrderedDict()
    for p in range(config.persons):
        lo = int(p * slot)
        hi = max(lo, int((p + 1) * slot) - face)
        x = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        x = min(x, size - face)
        y = int(rng.integers(int(size * 0.08), int(size * 0.3) + 1))
        faces[p + 1] = (x, y, face, face)
    obj_w = int(round(size * 0.18))
    obj_h = int(round(size * 0.12))
    ox = int(rng.integers(0, size - obj_w + 1))
    oy = int(rng.integers(int(size * 0.65), size - obj_h + 1))
    return faces, (ox, oy, obj_w, obj_h)


def mouth_bar(face, level):
    """
    Pixel rectangle (x0, y0, x1, y1), inclusive, of a mouth opened to `level` in [0, 1]. The
    bar is horizontally centered in the face and vertically centered at 3/4 of its height,
    inside the lower-central mouth crop.
    """
    x, y, w, h = face
    height = 1 + int(round(level * 0.35 * h))
    x0 = x + int(round(0.3 * w))
    x1 = x + int(round(0.7 * w)) - 1
    cy = y + int(round(0.75 * h))
    y0 = cy - height // 2
    return (x0, y0, x1, y0 + height - 1)


def render_frame(config, faces, colors, object_box, levels):
    img = Image.new("RGB", (config.image_size, config.image_size), BACKGROUND)
    draw = ImageDraw.Draw(img)
    ox, oy, ow, oh = object_box
    draw.rectangle([ox, oy, ox + ow - 1, oy + oh - 1], fill=OBJECT_COLOR)
    for pid, (x, y, w, h) in faces.items():
        draw.rectangle([x, y, x + w - 1, y + h - 1], fill=colors[pid])
        eye = max(1, w // 10)
        for ex in (x + int(0.3 * w), x + int(0.7 * w) - eye):
            ey = y + int(0.35 * h)
            draw.rectangle([ex, ey, ex + eye - 1, ey + eye - 1], fill=EYE_COLOR)
        draw.rectangle(list(mouth_bar((x, y, w, h), levels[pid])), fill=MOUTH_COLOR)
    return np.asarray(img, dtype=np.uint8)


def synth_scene(seed, config=None):
    """
    :param int seed: everything in the clip derives from it.
    :param SynthConfig config:
    :rtype: SyntheticClip
    """
    config = config or SynthConfig()
    rng = np.random.default_rng(seed)
    video = config.video or "synth{:05d}".format(seed)
    faces, object_box = _layout(rng, config)
    colors = collections.OrderedDict(
        (pid, tuple(int(c) for c in rng.integers((150, 100, 80), (256, 200, 170)))) for pid in faces)
    envelopes = collections.OrderedDict((pid, envelope(rng, config.frames)) for pid in faces)

    if config.out_of_frame:
        speaker_id = None
        audio_env = envelope(rng, config.frames)
    else:
        speaker_id = int(rng.integers(1, config.persons + 1))
        audio_env = envelopes[speaker_id]
    audio = modulated_audio(audio_env, rng)

    frames = []
    mouth_heights = collections.OrderedDict((pid, np.zeros(config.frames, dtype=int)) for pid in faces)
    for t in range(config.frames):
        levels = {pid: envelopes[pid][t] for pid in faces}
        for pid in faces:
            x0, y0, x1, y1 = mouth_bar(faces[pid], levels[pid])
            mouth_heights[pid][t] = y1 - y0 + 1
        frames.append(render_frame(config, faces, colors, object_box, levels))

    records = []
    identity = []
    for t in range(config.frames):
        for pid, face in faces.items():
            label = SPEAKER if pid == speaker_id else LISTENER
            identity.append(row(IDENTITY_KEYS, video, t, pid, label, None))
            target = faces[speaker_id] if (speaker_id is not None and label == LISTENER) else object_box
            records.append(VgsRecord(video=video, frame=t, person_id=pid, head_box=face, target_box=target,
                                     label=label))
    header = VideoHeader(video=video, fps=VIDEO_FPS, width=config.image_size, height=config.image_size)
    logger.debug("synthesised {} (speaker {}, {} frames)".format(video, speaker_id, config.frames))
    return SyntheticClip(video, frames, audio, VgsDataset(records, [header]), identity, speaker_id, faces,
                         object_box, mouth_heights, audio_env)
