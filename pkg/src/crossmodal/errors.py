"""Exception hierarchy shared across the package.

Two families matter to callers: ``DataError`` for malformed or unusable
inputs (files, vocabularies, splits) and ``NumericError`` for mathematically
invalid operations. The CLI maps them to distinct exit codes.
"""


class CrossModalError(Exception):
    """Base class for all package errors."""


class NumericError(CrossModalError):
    """A numerically invalid operation (exit code 3 on the CLI)."""


class DataError(CrossModalError):
    """Bad or unusable input data (exit code 2 on the CLI)."""


class ZeroVector(NumericError):
    """Cosine similarity requested on a zero-norm vector."""


class DimMismatch(NumericError):
    """Operands disagree on dimensionality."""


class DegenerateDistribution(NumericError):
    """A probability restriction carries zero total mass."""


class ConstantSeries(NumericError):
    """Correlation requested on a zero-variance series."""


class NonFiniteGradient(NumericError):
    """An optimizer step received NaN or Inf gradients."""


class InconsistentCandidates(NumericError):
    """Ranking results mix different candidate-set sizes."""


class OovLabel(DataError):
    """Every token of a class label is out of vocabulary."""


class OovSentence(DataError):
    """Every token of a sentence is out of vocabulary."""


class OovBenchmark(DataError):
    """No benchmark pair has both tokens in vocabulary."""


class EmptySplit(DataError):
    """An operation received an empty data split."""


class UnknownTruth(DataError):
    """A query's true candidate is missing from the candidate set."""


class ParseError(DataError):
    """A file could not be parsed; carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class DuplicateToken(DataError):
    """An embedding file defines the same token twice."""


class VersionMismatch(DataError):
    """A checkpoint was written with an unsupported format version."""
