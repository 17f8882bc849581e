"""
Converters between VGS records and the COCO, VOC and VideoAttentionTarget layouts.

COCO and VOC keep every field of a record, so converting back gives the original records.
VideoAttentionTarget rows carry only the center of the gaze target; importing them rebuilds a
point box (gx, gy, 0, 0) and marks the dataset lossy.
"""
import collections
import csv
import io
import json
import os
import xml.etree.ElementTree as ET

import chorus.atomic
import chorus.exceptions
from chorus import get_logger
from chorus.boxes import box_center
from chorus.data.records import VgsDataset, VgsRecord, VideoHeader

logger = get_logger(__name__)

GAZE_TARGET = "gaze_target"
HEAD = "head"
CATEGORIES = collections.OrderedDict([(GAZE_TARGET, 1), (HEAD, 2)])

VAT_COLUMNS = ("path", "person_id", "xmin", "ymin", "xmax", "ymax", "gx", "gy")


def frame_file_name(video, frame):
    return "{}/{:06d}.png".format(video, frame)


def _area(box):
    return box[2] * box[3]


# COCO

def vgs_to_coco(dataset):
    """
    One image per (video, frame); per record a `gaze_target` annotation followed by a `head`
    annotation, both carrying `person_id`. Ids count from 1 in record order. Video headers
    are kept under the non-standard `videos` key.

    :rtype: collections.OrderedDict
    """
    if not isinstance(dataset, VgsDataset):
        dataset = VgsDataset(dataset)
    images = []
    annotations = []
    image_ids = {}
    for r in dataset:
        if r.frame_key not in image_ids:
            header = dataset.headers[r.video]
            image_ids[r.frame_key] = len(images) + 1
            images.append(collections.OrderedDict([
                ("id", image_ids[r.frame_key]),
                ("file_name", frame_file_name(r.video, r.frame)),
                ("width", header.width),
                ("height", header.height),
                ("video", r.video),
                ("frame", r.frame),
            ]))
        for category, box in ((GAZE_TARGET, r.target_box), (HEAD, r.head_box)):
            ann = collections.OrderedDict([
                ("id", len(annotations) + 1),
                ("image_id", image_ids[r.frame_key]),
                ("category_id", CATEGORIES[category]),
                ("bbox", list(box)),
                ("area", _area(box)),
                ("iscrowd", 0),
                ("person_id", r.person_id),
            ])
            if category == HEAD:
                ann["identity"] = r.label
            annotations.append(ann)
    return collections.OrderedDict([
        ("info", collections.OrderedDict([("description", "VGS annotations"), ("version", "1.0")])),
        ("videos", [h.to_dict() for h in dataset.headers.values()]),
        ("images", images),
        ("annotations", annotations),
        ("categories", [collections.OrderedDict([("id", i), ("name", n)]) for n, i in CATEGORIES.items()]),
    ])


def coco_to_vgs(document):
    """
    Inverse of `vgs_to_coco`.

    :rtype: VgsDataset
    """
    try:
        names = {c["id"]: c["name"] for c in document["categories"]}
        images = {img["id"]: img for img in document["images"]}
        headers = [VideoHeader.from_dict(v) for v in document.get("videos", [])]
        parts = collections.OrderedDict()
        for ann in document["annotations"]:
            img = images[ann["image_id"]]
            key = (img["video"], img["frame"], ann["person_id"])
            part = parts.setdefault(key, {})
            name = names[ann["category_id"]]
            if name in part:
                raise chorus.exceptions.FormatError(
                    "two {} annotations for {}".format(name, key), field="annotations")
            part[name] = ann
    except KeyError as e:
        raise chorus.exceptions.FormatError("COCO document lacks {}".format(e), field=str(e).strip("'"))

    if not headers:
        sizes = collections.OrderedDict()
        for img in document["images"]:
            sizes.setdefault(img["video"], (img["width"], img["height"]))
        headers = [VideoHeader.default(v, width=w, height=h) for v, (w, h) in sizes.items()]

    records = []
    for (video, frame, person_id), part in parts.items():
        if set(part) != {GAZE_TARGET, HEAD}:
            raise chorus.exceptions.FormatError(
                "person {} of {} frame {} needs one head and one gaze_target annotation".format(person_id, video, frame),
                field="annotations")
        records.append(VgsRecord(video=video, frame=frame, person_id=person_id,
                                 head_box=part[HEAD]["bbox"], target_box=part[GAZE_TARGET]["bbox"],
                                 label=part[HEAD].get("identity")))
    return VgsDataset(records, headers)


def write_coco(path, dataset):
    chorus.atomic.write_text(path, json.dumps(vgs_to_coco(dataset), indent=2) + "\n")


def read_coco(path):
    with open(path, encoding='utf-8') as f:
        return coco_to_vgs(json.load(f, object_pairs_hook=collections.OrderedDict))


# VOC

def _text(parent, tag, value):
    child = ET.SubElement(parent, tag)
    child.text = str(value)
    return child


def _number(text, field):
    try:
        return int(text)
    except (TypeError, ValueError):
        pass
    try:
        return float(text)
    except (TypeError, ValueError):
        raise chorus.exceptions.FormatError("{} is not a number: {!r}".format(field, text), field=field)


def vgs_to_voc(dataset):
    """
    One XML document per frame. Every record gives a `gaze_target` and a `head` object whose
    bndbox is xmin = x, ymin = y, xmax = x + w, ymax = y + h (pixel edges, exclusive of the pixel
    at xmax).

    :returns: OrderedDict of (video, frame) -> XML string.
    """
    if not isinstance(dataset, VgsDataset):
        dataset = VgsDataset(dataset)
    documents = collections.OrderedDict()
    for (video, frame), records in dataset.by_frame().items():
        header = dataset.headers[video]
        root = ET.Element("annotation")
        _text(root, "folder", video)
        _text(root, "filename", "{:06d}.png".format(frame))
        source = ET.SubElement(root, "source")
        _text(source, "database", "VGS")
        _text(source, "fps", header.fps)
        size = ET.SubElement(root, "size")
        _text(size, "width", header.width)
        _text(size, "height", header.height)
        _text(size, "depth", 3)
        for r in records:
            for name, box in ((GAZE_TARGET, r.target_box), (HEAD, r.head_box)):
                obj = ET.SubElement(root, "object")
                _text(obj, "name", name)
                _text(obj, "person_id", r.person_id)
                if name == HEAD and r.label is not None:
                    _text(obj, "identity", r.label)
                _text(obj, "difficult", 0)
                bndbox = ET.SubElement(obj, "bndbox")
                x, y, w, h = box
                _text(bndbox, "xmin", x)
                _text(bndbox, "ymin", y)
                _text(bndbox, "xmax", x + w)
                _text(bndbox, "ymax", y + h)
        documents[(video, frame)] = ET.tostring(root, encoding="unicode")
    return documents


def voc_to_vgs(documents):
    """
    Inverse of `vgs_to_voc`.

    :param documents: XML strings (or a mapping whose values are XML strings).
    :rtype: VgsDataset
    """
    if isinstance(documents, dict):
        documents = documents.values()
    headers = collections.OrderedDict()
    records = []
    for text in documents:
        try:
            root = ET.fromstring(text)
        except ET.ParseError as e:
            raise chorus.exceptions.FormatError("unreadable VOC document: {}".format(e), field="xml")
        video = root.findtext("folder")
        frame = _number(os.path.splitext(root.findtext("filename") or "")[0], "filename")
        if video not in headers:
            headers[video] = VideoHeader(video=video, fps=_number(root.findtext("source/fps"), "fps"),
                                         width=_number(root.findtext("size/width"), "width"),
                                         height=_number(root.findtext("size/height"), "height"))
        parts = collections.OrderedDict()
        for obj in root.findall("object"):
            person_id = _number(obj.findtext("person_id"), "person_id")
            bb = obj.find("bndbox")
            if bb is None:
                raise chorus.exceptions.FormatError("object without bndbox", field="bndbox")
            xmin, ymin = _number(bb.findtext("xmin"), "xmin"), _number(bb.findtext("ymin"), "ymin")
            xmax, ymax = _number(bb.findtext("xmax"), "xmax"), _number(bb.findtext("ymax"), "ymax")
            part = parts.setdefault(person_id, {})
            part[obj.findtext("name")] = ((xmin, ymin, xmax - xmin, ymax - ymin), obj.findtext("identity"))
        for person_id, part in parts.items():
            if GAZE_TARGET not in part or HEAD not in part:
                raise chorus.exceptions.FormatError(
                    "person {} of {} frame {} needs a head and a gaze_target object".format(person_id, video, frame),
                    field="object")
            records.append(VgsRecord(video=video, frame=frame, person_id=person_id, head_box=part[HEAD][0],
                                     target_box=part[GAZE_TARGET][0], label=part[HEAD][1]))
    return VgsDataset(records, headers)


def write_voc(directory, dataset):
    """
    Writes `<directory>/<video>/<frame:06>.xml`.

    :returns: the written paths.
    """
    paths = []
    for (video, frame), text in vgs_to_voc(dataset).items():
        path = os.path.join(directory, video, "{:06d}.xml".format(frame))
        chorus.atomic.write_text(path, text + "\n")
        paths.append(path)
    return paths


def read_voc(directory):
    documents = []
    for root, _, files in sorted(os.walk(directory)):
        for name in sorted(files):
            if name.endswith(".xml"):
                with open(os.path.join(root, name), encoding='utf-8') as f:
                    documents.append(f.read())
    return voc_to_vgs(documents)


# VideoAttentionTarget

def vgs_to_vat(dataset):
    """
    One row per record: frame path, person id, head xmin/ymin/xmax/ymax and the center (gx, gy)
    of the target box.

    :rtype: list
    """
    if not isinstance(dataset, VgsDataset):
        dataset = VgsDataset(dataset)
    rows = []
    for r in dataset:
        x, y, w, h = r.head_box
        gx, gy = box_center(r.target_box)
        rows.append((frame_file_name(r.video, r.frame), r.person_id, x, y, x + w, y + h, gx, gy))
    return rows


def vat_to_vgs(rows, headers=None):
    """
    Rebuilds records from VideoAttentionTarget rows. The target extent is not stored in that
    layout, so target boxes come back as (gx, gy, 0, 0), labels as None, and the dataset is
    flagged `lossy`.

    :rtype: VgsDataset
    """
    records = []
    for i, row in enumerate(rows, start=1):
        if len(row) != len(VAT_COLUMNS):
            raise chorus.exceptions.ParseError("expected {} columns, got {}".format(len(VAT_COLUMNS), len(row)), i)
        path, person_id, xmin, ymin, xmax, ymax, gx, gy = row
        video, name = os.path.split(str(path))
        values = [_number(v, c) for v, c in zip((person_id, xmin, ymin, xmax, ymax, gx, gy), VAT_COLUMNS[1:])]
        person_id, xmin, ymin, xmax, ymax, gx, gy = values
        records.append(VgsRecord(video=video, frame=_number(os.path.splitext(name)[0], "path"), person_id=person_id,
                                 head_box=(xmin, ymin, xmax - xmin, ymax - ymin), target_box=(gx, gy, 0, 0)))
    return VgsDataset(records, headers, lossy=True)


def _format_value(v):
    return repr(v) if isinstance(v, float) else str(v)


def vat_dumps(rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(VAT_COLUMNS)
    for row in rows:
        writer.writerow([_format_value(v) for v in row])
    return out.getvalue()


def vat_loads(text):
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if rows and tuple(rows[0]) == VAT_COLUMNS:
        rows = rows[1:]
    return rows


def write_vat(path, dataset):
    chorus.atomic.write_text(path, vat_dumps(vgs_to_vat(dataset)))


def read_vat(path, headers=None):
    with open(path, encoding='utf-8') as f:
        dataset = vat_to_vgs(vat_loads(f.read()), headers)
    logger.warning("{}: VideoAttentionTarget rows carry no target extent; target boxes are points".format(path))
    return dataset
