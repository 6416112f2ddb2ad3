"""Exception hierarchy shared by every rcmot module."""


class RcmotError(Exception):
    """Base class for all library errors."""


class InvalidInputError(RcmotError, ValueError):
    pass


class ProjectiveDegeneracyError(RcmotError, ArithmeticError):
    """Homogeneous denominator vanished while applying a homography."""


class InsufficientDataError(RcmotError, ValueError):
    pass


class DegenerateConfigurationError(RcmotError, ValueError):
    """Point configuration does not determine a homography (e.g. collinear)."""


class CalibrationFailedError(RcmotError):
    pass


class BehindCameraError(RcmotError, ValueError):
    pass


class ParseError(RcmotError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class InvalidCalibrationError(RcmotError, ValueError):
    pass


class FrameMismatchError(InvalidInputError):
    pass
