"""Exception hierarchy shared across the package."""


class VcambaError(Exception):
    pass


class ShapeError(VcambaError, ValueError):
    pass


class NumericsError(VcambaError, FloatingPointError):
    pass


class NonScalarLoss(VcambaError, ValueError):
    pass


class NonPositiveDelta(VcambaError, ValueError):
    pass


class EmptySequence(VcambaError, ValueError):
    pass


class TooFewFrames(VcambaError, ValueError):
    pass


class BadRange(VcambaError, ValueError):
    pass


class ObjectOutOfFrame(VcambaError, ValueError):
    pass


class ConfigError(VcambaError, ValueError):
    pass


class DataError(VcambaError, IOError):
    pass


class CheckpointError(VcambaError, IOError):
    pass


class UnknownVariant(VcambaError, KeyError):
    pass
