"""Exception hierarchy. Everything raised on bad data derives from SeamweldError."""


class SeamweldError(Exception):
    """Base class for data errors (the CLI maps these to exit code 2)."""


class ImageReadError(SeamweldError):
    pass


class UnsupportedFormatError(SeamweldError):
    pass


class EmptyImageError(SeamweldError):
    pass


class ImageWriteError(SeamweldError):
    pass


class DegenerateHomographyError(SeamweldError):
    pass


class NoOverlapError(SeamweldError):
    pass


class DegenerateOverlapError(SeamweldError):
    """An overlap pixel touches both one-sided areas, so its label pin is contradictory."""


class DegenerateHistogramError(SeamweldError):
    pass


class PenaltyTooSmallError(SeamweldError):
    pass


class InstanceTooLargeError(SeamweldError):
    pass


class InstanceFormatError(SeamweldError):
    pass
