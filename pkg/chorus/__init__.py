import logging
import sys

CHORUS_NAMESPACE = "chorus"

VIDEO_FPS = 25
SAMPLE_RATE = 16000
MFCC_RATE = 100
LIP_WINDOW = 5  # video frames, 200 ms at 25 fps
AUDIO_WINDOW = 20  # MFCC frames, 200 ms at 100 Hz
EMBED_DIM = 64

SYSLOG_LEVEL = logging.WARNING
LOG_FORMAT = 'chorus %(levelname)s [%(name)s:%(lineno)d] %(message)s'


def get_logger(name, log_level=SYSLOG_LEVEL):
    """
    Every chorus logger hangs below the `chorus` namespace logger, which owns the single stderr
    handler; stdout carries command output only. `log_level` applies to the whole namespace and
    only takes effect on the first call.
    """
    root = logging.getLogger(CHORUS_NAMESPACE)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        root.setLevel(log_level)
    if name != CHORUS_NAMESPACE and not name.startswith(CHORUS_NAMESPACE + "."):
        name = "{}.{}".format(CHORUS_NAMESPACE, name)
    return logging.getLogger(name)


def set_log_level(log_level):
    logging.getLogger(CHORUS_NAMESPACE).setLevel(log_level)


def frames_per_hop():
    """
    :returns: The number of MFCC frames that cover one video frame (4 at 100 Hz / 25 fps).
    :rtype: int
    """
    return MFCC_RATE // VIDEO_FPS
