"""Exception types shared across the package.

Validation problems (bad shapes, malformed files, inconsistent labels)
raise subclasses of :class:`ValidationError`; non-finite numbers surfacing
where finite values are required raise subclasses of
:class:`NumericalError`.  The CLI maps the former to exit code 1 and the
latter to exit code 2.
"""


class SbpError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SbpError):
    """Bad inputs: shapes, documents, specs, labels."""


class NumericalError(SbpError):
    """Non-finite values where finite numbers are required."""


class ShapeMismatch(ValidationError):
    pass


class OddSpatialExtent(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class ConflictingParent(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class MalformedDocument(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class InconsistentLabels(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class NonPositiveRatio(ValidationError):
    pass


class NonFiniteValue(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass
