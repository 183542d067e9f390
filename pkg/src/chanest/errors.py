"""Exception hierarchy shared by all chanest modules."""


class ChanestError(Exception):
    """Base class for every error raised by this package."""


class UnknownProfile(ChanestError, KeyError):
    pass


class InvalidParameter(ChanestError, ValueError):
    pass


class InvalidLength(ChanestError, ValueError):
    pass


class ShapeMismatch(ChanestError, ValueError):
    pass


class DivisionByZero(ChanestError, ZeroDivisionError):
    pass


class InsufficientSamples(ChanestError, ValueError):
    pass


class InvalidDistribution(ChanestError, ValueError):
    pass


class DegenerateInput(ChanestError, ValueError):
    pass


class FormatError(ChanestError, ValueError):
    pass


class IoError(ChanestError, OSError):
    pass
