"""
Frame images (8-bit RGB PNG, P6 PPM accepted on read) and the clip directory layout:

```
<clip>/frames/000000.png ...
<clip>/audio.wav
<clip>/annotations.vgs.jsonl
<clip>/identity.jsonl
```
"""
import glob
import io
import os

import numpy as np
from PIL import Image

import chorus.atomic
import chorus.exceptions
from chorus import get_logger
from chorus.audio import load_wav, write_wav
from chorus.data import jsonl
from chorus.data.records import VgsDataset, read_vgs, write_vgs

logger = get_logger(__name__)

PNG_SIGNATURE = b'\x89PNG\r\n\x1a\n'
PPM_MAGIC = b'P6'

FRAMES_DIR = "frames"
AUDIO_FILE = "audio.wav"
ANNOTATIONS_FILE = "annotations.vgs.jsonl"
IDENTITY_FILE = "identity.jsonl"


def encode_png(pixels):
    """
    :param numpy.ndarray pixels: (H, W, 3) RGB or (H, W) grayscale uint8.
    :rtype: bytes
    """
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim not in (2, 3) or (pixels.ndim == 3 and pixels.shape[2] != 3):
        raise chorus.exceptions.ShapeError(
            "expected (H, W, 3) or (H, W) uint8 pixels, got {} {}".format(pixels.dtype, pixels.shape))
    out = io.BytesIO()
    Image.fromarray(pixels).save(out, format="PNG")
    return out.getvalue()


def write_png(path, pixels):
    chorus.atomic.write_bytes(path, encode_png(pixels))


def read_image(path):
    """
    :returns: (H, W, 3) uint8 RGB.
    :raises FormatError: when the file is neither PNG nor binary PPM.
    """
    with open(path, 'rb') as f:
        head = f.read(8)
    if head == PNG_SIGNATURE:
        kind = "PNG"
    elif head[:2] == PPM_MAGIC:
        kind = "PPM"
    else:
        raise chorus.exceptions.FormatError(
            "{}: signature {!r} is neither PNG nor P6 PPM".format(path, head), field="signature")
    with Image.open(path) as img:
        if img.format != kind:
            raise chorus.exceptions.FormatError("{}: decoded as {}".format(path, img.format), field="format")
        if img.mode not in ("RGB", "L", "RGBA", "P"):
            raise chorus.exceptions.FormatError("{}: unsupported mode {}".format(path, img.mode), field="mode")
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def frame_path(directory, index):
    return os.path.join(directory, FRAMES_DIR, "{:06d}.png".format(index))


class Clip(object):
    """
    One video clip: RGB frames, its audio track, the VGS annotations and the identity rows
    (dicts with video, frame, person_id, label, score).
    """

    def __init__(self, video, frames, audio, annotations, identity=None):
        self.video = video
        self.frames = list(frames)
        self.audio = audio
        self.annotations = annotations
        self.identity = list(identity or [])

    def __len__(self):
        return len(self.frames)

    def face_tracks(self):
        """
        :returns: person id -> [(frame index, head box)] from the annotations.
        """
        from chorus.speaker import FaceTrack

        entries = {}
        for r in self.annotations:
            if r.video == self.video:
                entries.setdefault(r.person_id, []).append((r.frame, r.head_box))
        return [FaceTrack(pid, entries[pid]) for pid in sorted(entries)]


def write_clip(directory, clip):
    for i, pixels in enumerate(clip.frames):
        write_png(frame_path(directory, i), pixels)
    write_wav(os.path.join(directory, AUDIO_FILE), clip.audio)
    write_vgs(os.path.join(directory, ANNOTATIONS_FILE), clip.annotations)
    jsonl.write_jsonl(os.path.join(directory, IDENTITY_FILE), clip.identity)
    logger.info("wrote clip {} ({} frames) to {}".format(clip.video, len(clip.frames), directory))


def read_clip(directory, video=None):
    """
    Reads a clip directory; missing annotation or identity files read as empty.

    :rtype: Clip
    """
    paths = sorted(glob.glob(os.path.join(directory, FRAMES_DIR, "*.png")) +
                   glob.glob(os.path.join(directory, FRAMES_DIR, "*.ppm")))
    frames = [read_image(p) for p in paths]
    audio = load_wav(os.path.join(directory, AUDIO_FILE))
    annotations_path = os.path.join(directory, ANNOTATIONS_FILE)
    if os.path.exists(annotations_path):
        annotations = read_vgs(annotations_path)
    else:
        annotations = VgsDataset()
    identity_path = os.path.join(directory, IDENTITY_FILE)
    identity = jsonl.read_jsonl(identity_path) if os.path.exists(identity_path) else []
    if video is None:
        videos = list(annotations.headers)
        video = videos[0] if videos else os.path.basename(os.path.normpath(directory))
    return Clip(video, frames, audio, annotations, identity)
