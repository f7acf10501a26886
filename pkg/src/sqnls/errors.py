"""Exception types raised across the package."""


class SQNError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(SQNError, ValueError):
    pass


class RankDeficient(SQNError, ValueError):
    pass


class DowndateFailure(SQNError, ArithmeticError):
    """A rank-1 downdate would destroy positive definiteness.

    The caller is expected to rebuild the factor from scratch.
    """


class SingularFactor(SQNError, ValueError):
    pass


class DimensionMismatch(SQNError, ValueError):
    pass


class DimensionTooLarge(SQNError, ValueError):
    pass


class EmptyBatch(SQNError, ValueError):
    pass


class BatchTooLarge(SQNError, ValueError):
    pass


class OracleFailure(SQNError, RuntimeError):
    pass


class NonFiniteIterate(SQNError, FloatingPointError):
    pass


class EmptyTrace(SQNError, ValueError):
    pass


class ParseError(SQNError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class NonMonotoneIndices(ParseError):
    pass


class DegenerateWeights(SQNError, FloatingPointError):
    pass


class UnknownDataset(SQNError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DownloadFailed(SQNError, OSError):
    pass
