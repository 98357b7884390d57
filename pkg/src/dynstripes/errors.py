"""Exception hierarchy shared by every module of the simulator."""


class DStripesError(Exception):
    """Base class for all simulator errors."""


class NegativeInput(DStripesError, ValueError):
    pass


class EmptyGroup(DStripesError, ValueError):
    pass


class WidthMismatch(DStripesError, ValueError):
    pass


class NotOneHot(DStripesError, ValueError):
    pass


class MissingProfile(DStripesError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ShapeMismatch(DStripesError, ValueError):
    pass


class InfeasibleSpec(DStripesError, ValueError):
    pass


class ConfigError(DStripesError, ValueError):
    pass


class TraceFormatError(DStripesError):
    """Raised when a trace file cannot be decoded."""


class BadMagic(TraceFormatError):
    pass


class UnsupportedVersion(TraceFormatError):
    pass


class Truncated(TraceFormatError):
    pass


class ValueOutOfRange(TraceFormatError):
    pass
