"""Exception types shared across the stitching toolkit."""


class StitchError(Exception):
    """Base class for every error raised by this package."""


# imgcore
class UnsupportedFormat(StitchError):
    pass


class CorruptData(StitchError):
    pass


class InvalidSigma(StitchError, ValueError):
    pass


class ImageTooSmall(StitchError, ValueError):
    pass


class BadTargetDims(StitchError, ValueError):
    pass


# lorb
class NoOverlap(StitchError, ValueError):
    pass


class OverlapExceedsImage(StitchError, ValueError):
    pass


class RegionTooSmall(StitchError, ValueError):
    pass


class WindowOutOfBounds(StitchError, ValueError):
    pass


class PatchOutOfBounds(StitchError, ValueError):
    pass


# matchlsh
class LengthMismatch(StitchError, ValueError):
    pass


class BadParams(StitchError, ValueError):
    pass


class TooManyProbes(StitchError, ValueError):
    pass


class ParamMismatch(StitchError, ValueError):
    pass


class EmptyInput(StitchError, ValueError):
    pass


class DegenerateConfiguration(StitchError):
    pass


class NumericalFailure(StitchError):
    pass


class InsufficientMatches(StitchError):
    pass


class NoModelFound(StitchError):
    pass


# compose
class SingularHomography(StitchError, ValueError):
    pass


class TooManyLevels(StitchError, ValueError):
    pass


class MaskMismatch(StitchError, ValueError):
    pass


# pipeline
class CapacityOverflow(StitchError):
    pass


class NoValidHomographyYet(StitchError):
    pass


class StageFailure(StitchError):
    def __init__(self, frame_index, stage, cause):
        super().__init__(f"frame {frame_index} failed in stage {stage}: {cause!r}")
        self.frame_index = frame_index
        self.stage = stage
        self.cause = cause


# cli
class ParseError(StitchError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(StitchError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class MissingFrames(StitchError):
    def __init__(self, pattern):
        super().__init__(f"no frames match {pattern!r}")
        self.pattern = pattern
