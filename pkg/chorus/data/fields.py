import numbers

import chorus.exceptions

SPEAKER = "speaker"
LISTENER = "listener"
LABELS = (SPEAKER, LISTENER)


class Field(object):
    """
    One column of an annotation line. MetaRecord picks out class attributes that are Fields and keeps
    them in declaration order; everything else on a record class is left alone.

    A field parses a raw (JSON-decoded) value into its in-memory form and dumps it back. Dumping a parsed
    value reproduces the raw value exactly, which is what makes annotation files byte-stable.
    """
    required = True

    def __init__(self, required=True):
        self.required = required

    def parse(self, value, name):
        return value

    def dump(self, value):
        return value

    def fail(self, name, value, expected):
        raise chorus.exceptions.ArgumentError("{} must be {}, got {!r}".format(name, expected, value))


class String(Field):

    def parse(self, value, name):
        if not isinstance(value, str) or not value:
            self.fail(name, value, "a non-empty string")
        return value


class Integer(Field):

    def __init__(self, minimum=0, required=True):
        super(Integer, self).__init__(required)
        self.minimum = minimum

    def parse(self, value, name):
        if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < self.minimum:
            self.fail(name, value, "an integer >= {}".format(self.minimum))
        return int(value)


class Box(Field):
    """
    An (x, y, w, h) pixel box with non-negative extent. Integer coordinates stay integers so that they
    serialize exactly as they were read.
    """

    def parse(self, value, name):
        if not isinstance(value, (list, tuple)) or len(value) != 4:
            self.fail(name, value, "a 4-element [x, y, w, h] list")
        for v in value:
            if isinstance(v, bool) or not isinstance(v, numbers.Real) or v != v or v in (float('inf'), float('-inf')):
                self.fail(name, value, "finite numbers")
        if value[2] < 0 or value[3] < 0:
            self.fail(name, value, "a box with non-negative width and height")
        return tuple(int(v) if isinstance(v, numbers.Integral) else float(v) for v in value)

    def dump(self, value):
        return list(value)


class Label(Field):
    """
    Optional speaker / listener identity.
    """

    def __init__(self, required=False):
        super(Label, self).__init__(required)

    def parse(self, value, name):
        if value is None:
            return None
        if value not in LABELS:
            self.fail(name, value, "one of {}".format(", ".join(LABELS)))
        return value
