"""
The pipeline configuration file: flat `key = value` lines, `#` comments and blank lines
allowed. Units are part of the key names.

```
# chorus pipeline
seed = 0
tau = auto
image_size_px = 256
detector.lr = 0.0025
detector.epochs = 12
```
"""
import collections
import os

import chorus.atomic
import chorus.exceptions
from chorus import get_logger
from chorus.detector.anchors import AnchorConfig
from chorus.detector.network import PRESETS, DetectConfig
from chorus.nn.optim import SgdConfig

logger = get_logger(__name__)

STAGES = ("sync", "detector", "matcher")
DETECTOR_TARGETS = ("all", "listeners")

STAGE_DEFAULTS = {
    "sync": SgdConfig(lr=0.01, momentum=0.9, epochs=12, batch_size=16, seed=0),
    "detector": SgdConfig(),
    "matcher": SgdConfig(lr=0.01, momentum=0.9, epochs=12, batch_size=2, seed=0),
}


def _parse_bool(text):
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise ValueError("not a boolean: {!r}".format(text))


def _parse_tau(text):
    return None if text == "auto" else float(text)


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse_path(text):
    return text


# key -> (parser, default)
FIELDS = collections.OrderedDict([
    ("clip_dir", (_parse_path, "clip")),
    ("frames_dir", (_parse_path, "clip/frames")),
    ("audio_path", (_parse_path, "clip/audio.wav")),
    ("annotations_path", (_parse_path, "clip/annotations.vgs.jsonl")),
    ("checkpoint_dir", (_parse_path, "checkpoints")),
    ("output_dir", (_parse_path, "out")),
    ("seed", (int, 0)),
    ("tau", (_parse_tau, None)),
    ("no_audio", (_parse_bool, False)),
    ("image_size_px", (int, 256)),
    ("backbone", (str, "tiny")),
    ("anchor.scales_px", (_parse_floats, (32.0, 64.0, 128.0))),
    ("anchor.ratios", (_parse_floats, (0.5, 1.0, 2.0))),
    ("pre_nms_top_k", (int, 200)),
    ("nms_iou", (float, 0.7)),
    ("post_nms_top_k", (int, 20)),
    ("eval_iou", (float, 0.5)),
    ("train.frame_stride", (int, 5)),
    ("detector.targets", (str, "all")),
    ("heatmaps", (_parse_bool, False)),
])
for _stage in STAGES:
    for _name, _value in STAGE_DEFAULTS[_stage].to_dict().items():
        FIELDS["{}.{}".format(_stage, _name)] = (float if _name in ("lr", "momentum") else int, _value)


class PipelineConfig(object):
    """
    Every setting of a pipeline run. Attribute names are the file keys with dots replaced by
    underscores, e.g. `detector.lr` is `detector_lr`; `sgd(stage)` assembles an SgdConfig.
    """

    def __init__(self, **kwargs):
        values = collections.OrderedDict((k, default) for k, (_, default) in FIELDS.items())
        for name, value in kwargs.items():
            key = self._key(name)
            if key not in FIELDS:
                raise chorus.exceptions.ArgumentError("unknown config key {!r}".format(name))
            values[key] = value
        self._values = values
        self.validate()

    @staticmethod
    def _key(name):
        if name in FIELDS:
            return name
        for key in FIELDS:
            if key.replace(".", "_") == name:
                return key
        return name

    def __getattr__(self, name):
        values = self.__dict__.get("_values")
        if values is not None:
            key = self._key(name)
            if key in values:
                return values[key]
        raise AttributeError(name)

    def __getitem__(self, key):
        return self._values[key]

    def validate(self):
        if self.backbone not in PRESETS:
            raise chorus.exceptions.ArgumentError("unknown backbone preset {!r}".format(self.backbone))
        if self.tau is not None and not self.tau > 0:
            raise chorus.exceptions.ArgumentError("tau must be positive, got {}".format(self.tau))
        if not 0 < self.nms_iou <= 1:
            raise chorus.exceptions.ArgumentError("nms_iou must be in (0, 1], got {}".format(self.nms_iou))
        if self["detector.targets"] not in DETECTOR_TARGETS:
            raise chorus.exceptions.ArgumentError("detector.targets must be one of {}, got {!r}".format(
                ", ".join(DETECTOR_TARGETS), self["detector.targets"]))
        if self.train_frame_stride < 1:
            raise chorus.exceptions.ArgumentError("train.frame_stride must be >= 1")
        for stage in STAGES:
            self.sgd(stage)

    def sgd(self, stage):
        """
        :rtype: SgdConfig
        """
        return SgdConfig(**{name: self._values["{}.{}".format(stage, name)]
                            for name in ("lr", "momentum", "epochs", "batch_size", "seed")})

    def detect_config(self):
        return DetectConfig(pre_nms_top_k=self.pre_nms_top_k, nms_iou=self.nms_iou,
                            post_nms_top_k=self.post_nms_top_k)

    def anchor_config(self, stride):
        return AnchorConfig(scales=self["anchor.scales_px"], ratios=self["anchor.ratios"], stride=stride)

    def checkpoint(self, stage):
        return os.path.join(self.checkpoint_dir, "{}.json".format(stage))

    def replace(self, **kwargs):
        values = collections.OrderedDict(self._values)
        for name, value in kwargs.items():
            values[self._key(name)] = value
        return PipelineConfig(**values)

    def to_dict(self):
        return collections.OrderedDict(self._values)

    def __eq__(self, other):
        return isinstance(other, PipelineConfig) and self._values == other._values

    def __ne__(self, other):
        return not self == other


def loads(text):
    """
    :rtype: PipelineConfig
    :raises ParseError: on a line without `=`, an unknown key, a repeated key or a bad value.
    """
    values = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise chorus.exceptions.ParseError("expected `key = value`, got {!r}".format(line.strip()), line_number)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in FIELDS:
            raise chorus.exceptions.ParseError("unknown key {!r}".format(key), line_number)
        if key in values:
            raise chorus.exceptions.ParseError("key {!r} given twice".format(key), line_number)
        try:
            values[key] = FIELDS[key][0](raw)
        except ValueError as e:
            raise chorus.exceptions.ParseError("bad value for {}: {}".format(key, e), line_number)
    try:
        return PipelineConfig(**values)
    except chorus.exceptions.ArgumentError as e:
        raise chorus.exceptions.ParseError(str(e))


def dumps(config):
    lines = ["# chorus pipeline configuration"]
    lines.extend("{} = {}".format(k, _format(v)) for k, v in config.to_dict().items())
    return "\n".join(lines) + "\n"


def load(path):
    with open(path, encoding='utf-8') as f:
        return loads(f.read())


def dump(path, config):
    chorus.atomic.write_text(path, dumps(config))
