"""Exception types shared across the toolkit."""


class FluenceError(Exception):
    """Base class for all toolkit errors."""


class DataError(FluenceError):
    """Bad input data: malformed files or violated invariants."""


class ParseError(DataError):
    """A file could not be parsed (malformed JSON, wrong field types)."""


class ValidationError(DataError):
    """Structurally parseable data that violates an invariant."""


class MissingEmbeddingError(ValidationError):
    """An example id has no entry in the embedding table."""


class MissingTrajectoryError(ValidationError):
    """A run lacks a trajectory for the requested (test_id, metric)."""


class UnknownExampleError(ValidationError):
    """A per-id simulator was asked about an id it never saw during fitting."""


class DegenerateRankingError(ValidationError):
    """Rank correlation is undefined: zero rank variance on one side."""


class NumericalError(FluenceError):
    """NaN or divergence encountered during fitting or rollout."""


class UsageError(FluenceError):
    """Bad command-line usage."""
