"""
JSON-lines output with a fixed key order, so that reruns of a stage write identical bytes.
"""
import collections
import json

import chorus.atomic
import chorus.exceptions

IDENTITY_KEYS = ("video", "frame", "person_id", "label", "score")
DETECTION_KEYS = ("video", "frame", "box", "score")
MATCH_KEYS = ("video", "frame", "person_id", "target_box", "probability")


def _finite_or_none(value):
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, float) and value in (float('inf'), float('-inf')):
        return None
    return value


def row(keys, *values):
    if len(keys) != len(values):
        raise chorus.exceptions.ArgumentError("{} values for keys {}".format(len(values), keys))
    return collections.OrderedDict((k, _finite_or_none(v)) for k, v in zip(keys, values))


def dumps(rows):
    return "".join(json.dumps(r) + "\n" for r in rows)


def write_jsonl(path, rows):
    chorus.atomic.write_text(path, dumps(rows))


def loads(text):
    out = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line, object_pairs_hook=collections.OrderedDict))
        except ValueError as e:
            raise chorus.exceptions.ParseError("malformed JSON: {}".format(e), line_number)
    return out


def read_jsonl(path):
    with open(path, encoding='utf-8') as f:
        return loads(f.read())
