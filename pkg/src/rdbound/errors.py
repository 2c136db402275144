"""Exception hierarchy shared by all modules."""


class RdError(Exception):
    """Base class for every error raised by rdbound."""


class NonFinite(RdError, ValueError):
    pass


class NonSquare(RdError, ValueError):
    pass


class AsymmetryTooLarge(RdError, ValueError):
    pass


class SketchDimExceedsRows(RdError, ValueError):
    pass


class RankDeficient(RdError, ValueError):
    pass


class InvalidResolution(RdError, ValueError):
    pass


class ShapeMismatch(RdError, ValueError):
    pass


class MismatchedLayers(RdError, ValueError):
    pass


class DimensionMismatch(RdError, ValueError):
    pass


class NotPsd(RdError, ValueError):
    pass


class SpectrumTooShort(RdError, ValueError):
    pass


class DivergedLoss(RdError, ArithmeticError):
    pass


class FormatError(RdError, ValueError):
    """Malformed file contents."""


class BadMagic(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DuplicateName(FormatError):
    pass
