"""
Identity maps and the five-channel [R, G, B, speaker, listener] frame the detector consumes.
"""
import os

import numpy as np

import chorus.exceptions
from chorus import get_logger
from chorus.boxes import clip_box, rasterize_box

logger = get_logger(__name__)

CHANNELS = 5
SPEAKER_CHANNEL = 3
LISTENER_CHANNEL = 4


class IdentityMaps(object):
    """
    Two binary (H, W) maps marking speaker and listener face regions.
    """

    def __init__(self, speaker, listener):
        if speaker.shape != listener.shape:
            raise chorus.exceptions.ShapeError(
                "speaker map {} and listener map {} differ in size".format(speaker.shape, listener.shape))
        self.speaker = speaker
        self.listener = listener

    @property
    def shape(self):
        return self.speaker.shape

    def swapped(self):
        return IdentityMaps(self.listener, self.speaker)


def _union(boxes, height, width):
    out = np.zeros((height, width), dtype=np.uint8)
    for box in boxes:
        out |= rasterize_box(clip_box(box, width, height), height, width)
    return out


def build_identity_maps(speaker_boxes, listener_boxes, height, width):
    """
    Pixel (r, c) is 1 in a map iff its center (c + 0.5, r + 0.5) lies inside one of the map's
    boxes, edges included. Overlapping boxes union.

    :param speaker_boxes: face boxes (x, y, w, h) of the speakers.
    :param listener_boxes: face boxes of the listeners.
    :rtype: IdentityMaps
    """
    if height <= 0 or width <= 0:
        raise chorus.exceptions.ArgumentError("identity maps need a positive size, got {}x{}".format(height, width))
    return IdentityMaps(_union(speaker_boxes, height, width), _union(listener_boxes, height, width))


class EnhancedFrame(object):
    """
    A (5, H, W) float array: RGB in [0, 1] followed by the speaker and listener maps. The RGB
    frame and both maps are exactly recoverable from it.
    """

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != CHANNELS:
            raise chorus.exceptions.ShapeError("an enhanced frame has shape (5, H, W), got {}".format(data.shape))
        self.data = data

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def rgb(self):
        """
        :returns: the original (H, W, 3) uint8 frame.
        """
        return np.round(self.data[:3] * 255.0).astype(np.uint8).transpose(1, 2, 0)

    @property
    def maps(self):
        return IdentityMaps(self.data[SPEAKER_CHANNEL].astype(np.uint8), self.data[LISTENER_CHANNEL].astype(np.uint8))

    def without_identity(self):
        """
        The same frame with both identity channels zeroed.
        """
        data = self.data.copy()
        data[SPEAKER_CHANNEL:] = 0.0
        return EnhancedFrame(data)


def enhance_frame(rgb, maps):
    """
    :param numpy.ndarray rgb: (H, W, 3) uint8 frame.
    :param IdentityMaps maps:
    :rtype: EnhancedFrame
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise chorus.exceptions.ShapeError("expected an (H, W, 3) frame, got {}".format(rgb.shape))
    if rgb.shape[:2] != maps.shape:
        raise chorus.exceptions.ShapeError(
            "frame is {}x{} but identity maps are {}x{}".format(rgb.shape[0], rgb.shape[1], *maps.shape))
    data = np.empty((CHANNELS,) + maps.shape, dtype=np.float64)
    data[:3] = rgb.transpose(2, 0, 1) / 255.0
    data[SPEAKER_CHANNEL] = maps.speaker
    data[LISTENER_CHANNEL] = maps.listener
    return EnhancedFrame(data)


def dump_identity_maps(directory, frame_index, maps):
    """
    Writes `speaker_NNNNNN.png` and `listener_NNNNNN.png` (0 / 255 grayscale) into `directory`.
    """
    from chorus.data.media import write_png

    paths = []
    for name, m in (("speaker", maps.speaker), ("listener", maps.listener)):
        path = os.path.join(directory, "{}_{:06d}.png".format(name, frame_index))
        write_png(path, (m * 255).astype(np.uint8))
        paths.append(path)
    return paths
