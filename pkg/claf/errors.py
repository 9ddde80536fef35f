class ClafError(Exception):
    pass


class ShapeError(ClafError):
    def __init__(self, op, *shapes, **kwargs):
        detail = kwargs.get('detail')
        msg = '%s: incompatible shapes %s' % (
            op, ', '.join(str(tuple(s)) for s in shapes))
        if detail:
            msg += ' (%s)' % detail
        super(ShapeError, self).__init__(msg)
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


class BindingError(ClafError):
    pass


class GradientError(ClafError):
    pass


class DataFormatError(ClafError):
    def __init__(self, msg, offset=None, label=None):
        super(DataFormatError, self).__init__(msg)
        self.offset = offset
        self.label = label


class DatasetMissing(ClafError):
    pass


class BatchError(ClafError):
    pass


class DegenerateNormalization(ClafError):
    pass


class EmptyPositiveSet(ClafError):
    def __init__(self, msg, anchors=()):
        super(EmptyPositiveSet, self).__init__(msg)
        self.anchors = tuple(anchors)


class LabelError(ClafError):
    pass


class CheckpointError(ClafError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class ConfigError(ClafError):
    pass


class AblationError(ClafError):
    pass


class FreezeViolation(ClafError):
    pass
