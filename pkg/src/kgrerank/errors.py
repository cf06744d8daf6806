"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto exit codes: configuration problems exit 1, bad
input data exits 2, and internal invariant violations exit 3.
"""


class KgRerankError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(KgRerankError):
    """Invalid configuration or invalid call parameters (exit code 1)."""


class DataError(KgRerankError):
    """Problems with input data files or ingested records (exit code 2)."""


class ParseError(DataError):
    """Malformed line in an input file; carries the 1-based line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class MappingError(DataError):
    """A raw relation has no entry in a strict relation merge map."""


class InputError(DataError):
    """A required record is missing or inconsistent at stage boundaries."""


class GraphLookupError(KgRerankError, LookupError):
    """Entity or relation id outside the graph vocabularies."""


class ShapeError(KgRerankError, ValueError):
    """Matrix dimensions do not agree; message names both shapes."""


class NonPositiveReliabilityError(KgRerankError, ArithmeticError):
    """Triplet reliability is <= 0, so its reciprocal distance is undefined."""


class DeterminismError(KgRerankError):
    """A computation that must be deterministic returned different results."""


class TrainingDivergedError(KgRerankError):
    """Training loss became non-finite; carries step diagnostics."""


class InvariantViolation(KgRerankError, AssertionError):
    """An internal invariant failed; indicates a bug (exit code 3)."""
