class ChorusError(Exception):
    pass


class ArgumentError(ChorusError):
    pass


class ShapeError(ArgumentError):

    def __init__(self, message, layer_index=None):
        super(ShapeError, self).__init__(message)
        self.layer_index = layer_index


class StateError(ChorusError):
    pass


class NonFiniteGradientError(StateError):

    def __init__(self, layer, max_abs):
        super(NonFiniteGradientError, self).__init__(
            "non-finite gradient in {} (max |g| = {})".format(layer, max_abs))
        self.layer = layer
        self.max_abs = max_abs


class FormatError(ChorusError):

    def __init__(self, message, field=None):
        super(FormatError, self).__init__(message)
        self.field = field


class ParseError(ChorusError):

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = "line {}: {}".format(line_number, message)
        super(ParseError, self).__init__(message)
        self.line_number = line_number


class InvalidCorpusError(ChorusError):
    pass


class UndefinedMetricError(ChorusError):
    pass


class FrameMismatchError(ChorusError):

    def __init__(self, missing):
        super(FrameMismatchError, self).__init__(
            "runs cover different frames; missing: {}".format(", ".join(str(m) for m in missing)))
        self.missing = list(missing)


class MissingCheckpointError(ChorusError):

    def __init__(self, stage, path):
        super(MissingCheckpointError, self).__init__(
            "no checkpoint for stage '{}' at {}".format(stage, path))
        self.stage = stage
        self.path = path


class SkipPerson(ChorusError):
    """
    Raised when a face box is too small to crop a mouth from. Callers drop the entry rather
    than fail.
    """
    pass
