"""Exception hierarchy shared by all scfa modules.

Two families matter for the CLI exit-code contract: ``InputError`` (bad
files, shapes, or model preconditions; exit code 2) and ``NumericalError``
(singular or numerically inconsistent linear algebra; exit code 3).
"""


class ScfaError(Exception):
    """Base class for all scfa errors."""


class InputError(ScfaError):
    """Invalid input data, dimensions, or model preconditions."""


class NumericalError(ScfaError):
    """Numerical failure in an otherwise valid computation."""


class DimensionMismatch(InputError):
    """Matrix or vector dimensions do not match the expected shape."""


class PartitionMismatch(InputError):
    """Two uniform-block operands carry different partition-size vectors."""


class StructureViolation(InputError):
    """A dense matrix deviates from the uniform-block structure.

    Carries the largest absolute deviation and the offending block index
    pair (zero-based).
    """

    def __init__(self, message, max_deviation=None, block=None):
        super().__init__(message)
        self.max_deviation = max_deviation
        self.block = block


class SingularMatrix(NumericalError):
    """Matrix is singular (or numerically singular) where invertibility is required."""


class ConsistencyError(NumericalError):
    """An internal cross-check failed, indicating numerical breakdown."""


class DegenerateSample(InputError):
    """Too few observations to form a sample covariance."""


class SampleTooSmall(InputError):
    """Sample size below the n > K + K(K+1)/2 requirement for estimation."""


class CommunityTooSmall(InputError):
    """A community has too few variables for the factor decomposition.

    Carries the offending community label (or 1-based index).
    """

    def __init__(self, message, community=None):
        super().__init__(message)
        self.community = community


# load_membership documents this name for the same condition.
CommunitySizeTooSmall = CommunityTooSmall


class NonPositiveVariance(InputError):
    """A supplied error variance is zero or negative."""


class ShapeMismatch(InputError):
    """Two arrays that must share a shape do not."""


class InvalidSpec(InputError):
    """A simulation specification violates its validity conditions."""


class ParseError(InputError):
    """A text input could not be parsed; carries line/column when known."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class RaggedRows(ParseError):
    """Rows of a numeric table have inconsistent lengths."""


class NonNumericCell(ParseError):
    """A cell of a numeric table is not a number."""


class UnknownVariable(InputError):
    """The membership file names a variable absent from the data."""


class MissingVariable(InputError):
    """A data variable has no community assignment."""
