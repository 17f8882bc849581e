"""
The VGS annotation schema: one JSON object per line, a header line per video (frame rate and
resolution) followed by that video's records, sorted by (frame, person id).

```
{"video": "v01", "fps": 25, "width": 1280, "height": 720}
{"video": "v01", "frame": 0, "person_id": 1, "head_box": [10, 20, 30, 40], "target_box": [500, 300, 60, 60], "label": "listener"}
```
"""
import collections
import json

import chorus.atomic
import chorus.exceptions
from chorus import VIDEO_FPS, get_logger
from chorus.data import fields

logger = get_logger(__name__)

DEFAULT_WIDTH = 1280
DEFAULT_HEIGHT = 720


class MetaRecord(type):
    """
    The MetaRecord is a meta-class for the Record; it collects the Field members of a record class, in
    declaration order, so that records can be built from keyword arguments and serialized in a fixed key
    order.
    """
    def __new__(cls, name, parents, dct):
        new = super(MetaRecord, cls).__new__(cls, name, parents, dct)
        new._fields = collections.OrderedDict()
        for parent in reversed(new.__mro__[1:]):
            new._fields.update(getattr(parent, '_fields', {}))
        for key, val in dct.items():
            if isinstance(val, fields.Field):
                new._fields[key] = val
        return new


class Record(object, metaclass=MetaRecord):
    """
    The Record class is the base for the annotation line types. Fields are passed to the initializer as
    kwargs, validated by their Field, and set as plain attributes.
    """

    def __init__(self, **kwargs):
        unknown = set(kwargs) - set(self._fields)
        if unknown:
            raise chorus.exceptions.ArgumentError("unknown field(s) {} for {}".format(
                ", ".join(sorted(unknown)), self.__class__.__name__))
        for key, field in self._fields.items():
            if key not in kwargs or kwargs[key] is None:
                if field.required:
                    raise chorus.exceptions.ArgumentError("{} is a required field".format(key))
                setattr(self, key, None)
                continue
            setattr(self, key, field.parse(kwargs[key], key))

    def to_dict(self):
        return collections.OrderedDict((k, f.dump(getattr(self, k))) for k, f in self._fields.items())

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash(json.dumps(self.to_dict()))

    def __repr__(self):
        return "{}({})".format(self.__class__.__name__, ", ".join(
            "{}={!r}".format(k, getattr(self, k)) for k in self._fields))


class VideoHeader(Record):
    video = fields.String()
    fps = fields.Integer(minimum=1)
    width = fields.Integer(minimum=1)
    height = fields.Integer(minimum=1)

    @classmethod
    def default(cls, video, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT, fps=VIDEO_FPS):
        return cls(video=video, fps=fps, width=width, height=height)

    def contains(self, box):
        x, y, w, h = box
        return x >= 0 and y >= 0 and x + w <= self.width and y + h <= self.height


class VgsRecord(Record):
    """
    One annotation: where person `person_id` of `video` is at `frame` (head box) and what they
    look at (target box).
    """
    video = fields.String()
    frame = fields.Integer()
    person_id = fields.Integer()
    head_box = fields.Box()
    target_box = fields.Box()
    label = fields.Label()

    @property
    def key(self):
        return (self.video, self.frame, self.person_id)

    @property
    def frame_key(self):
        return (self.video, self.frame)


def sort_key(record):
    return record.key


class VgsDataset(object):
    """
    VGS records with their per-video headers. Iterating yields records in (video, frame,
    person id) order.
    """

    def __init__(self, records=(), headers=None, lossy=False):
        self.headers = collections.OrderedDict()
        for header in (headers.values() if isinstance(headers, dict) else headers or ()):
            self.headers[header.video] = header
        self.records = sorted(records, key=sort_key)
        self.lossy = lossy
        for r in self.records:
            if r.video not in self.headers:
                self.headers[r.video] = VideoHeader.default(r.video)
        self.headers = collections.OrderedDict(sorted(self.headers.items()))
        self.validate()

    def validate(self):
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise chorus.exceptions.ArgumentError("duplicate record {}".format(_format_key(r.key)))
            seen.add(r.key)
            _check_bounds(r, self.headers[r.video])

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        return (isinstance(other, VgsDataset) and self.records == other.records
                and list(self.headers.values()) == list(other.headers.values()))

    def frame_keys(self):
        """
        :returns: the distinct (video, frame) keys in order.
        """
        return list(collections.OrderedDict((r.frame_key, None) for r in self.records))

    def by_frame(self):
        out = collections.OrderedDict()
        for r in self.records:
            out.setdefault(r.frame_key, []).append(r)
        return out

    def subset(self, frame_keys):
        keys = set(frame_keys)
        records = [r for r in self.records if r.frame_key in keys]
        videos = set(r.video for r in records)
        return VgsDataset(records, [h for v, h in self.headers.items() if v in videos], self.lossy)


def _format_key(key):
    return "(video={!r}, frame={}, person_id={})".format(*key)


def _check_bounds(record, header):
    for name in ("head_box", "target_box"):
        if not header.contains(getattr(record, name)):
            raise chorus.exceptions.ArgumentError("{} {} of {} lies outside the {}x{} frame".format(
                name, list(getattr(record, name)), _format_key(record.key), header.width, header.height))


def _dump_line(d):
    return json.dumps(d, ensure_ascii=False)


def dumps(dataset):
    lines = []
    by_video = collections.defaultdict(list)
    for r in dataset.records:
        by_video[r.video].append(r)
    for video, header in dataset.headers.items():
        lines.append(_dump_line(header.to_dict()))
        lines.extend(_dump_line(r.to_dict()) for r in by_video[video])
    return "".join(line + "\n" for line in lines)


def loads(text):
    """
    :rtype: VgsDataset
    :raises ParseError: on a malformed line, an out-of-bounds box, a record of a video without
        a header, or a duplicate (video, frame, person id); the message carries the line number.
    """
    headers = collections.OrderedDict()
    records = []
    seen = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except ValueError as e:
            raise chorus.exceptions.ParseError("malformed JSON: {}".format(e), line_number)
        if not isinstance(d, dict):
            raise chorus.exceptions.ParseError("expected a JSON object", line_number)
        try:
            if "frame" not in d:
                header = VideoHeader.from_dict(d)
                if header.video in headers:
                    raise chorus.exceptions.ArgumentError("second header for video {!r}".format(header.video))
                headers[header.video] = header
                continue
            record = VgsRecord.from_dict(d)
            if record.video not in headers:
                raise chorus.exceptions.ArgumentError("record for video {!r} before its header".format(record.video))
            _check_bounds(record, headers[record.video])
            if record.key in seen:
                raise chorus.exceptions.ArgumentError("duplicate key {} (first on line {})".format(
                    _format_key(record.key), seen[record.key]))
        except chorus.exceptions.ArgumentError as e:
            raise chorus.exceptions.ParseError(str(e), line_number)
        seen[record.key] = line_number
        records.append(record)
    return VgsDataset(records, headers)


def read_vgs(path):
    with open(path, encoding='utf-8') as f:
        dataset = loads(f.read())
    logger.info("read {} records of {} videos from {}".format(len(dataset), len(dataset.headers), path))
    return dataset


def write_vgs(path, dataset):
    """
    :param dataset: a VgsDataset, or an iterable of VgsRecords (default headers are used).
    """
    if not isinstance(dataset, VgsDataset):
        dataset = VgsDataset(dataset)
    chorus.atomic.write_text(path, dumps(dataset))
