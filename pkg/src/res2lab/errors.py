"""Exception hierarchy shared by every res2lab module."""


class Res2LabError(Exception):
    """Base class for all library errors."""


class ValidationError(Res2LabError, ValueError):
    """Invalid shapes, configs or arguments."""


class ShapeMismatch(ValidationError):
    pass


class NonDivisibleChannels(ValidationError):
    pass


class EmptySpatial(ValidationError):
    pass


class NotScalarLoss(ValidationError):
    pass


class InvalidTemplate(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class EmptyRange(ValidationError):
    pass


class InvalidDimension(ValidationError):
    pass


class PreconditionViolation(ValidationError):
    pass


class UnknownLayer(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class FormatError(Res2LabError):
    """Malformed on-disk data."""


class BadRecordLength(FormatError):
    pass


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class TruncatedFile(FormatError):
    pass
