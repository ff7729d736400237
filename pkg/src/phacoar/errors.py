"""Exception hierarchy shared by all modules."""


class PhacoError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PhacoError):
    """Input failed a precondition (bad shape, range, or file)."""


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyMask(PhacoError):
    pass


class MultipleComponents(PhacoError):
    pass


class ContourTooShort(PhacoError):
    pass


class AllPointsRejected(PhacoError):
    pass


class TooFewPoints(PhacoError):
    pass


class DegenerateGeometry(PhacoError):
    pass


class NumericalFailure(PhacoError):
    pass


class DegenerateAnnulus(PhacoError):
    pass


class ZeroVariance(PhacoError):
    pass


class MissingInput(PhacoError):
    pass


class MissingColor(PhacoError):
    pass


class EmptyClass(ValidationError):
    pass


class DivergenceDetected(PhacoError):
    pass


class InputExhausted(PhacoError):
    pass
