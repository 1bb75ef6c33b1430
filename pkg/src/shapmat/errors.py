"""Exception taxonomy shared by all shapmat modules."""


class ShapmatError(Exception):
    """Base class for all library errors."""


class NotFound(ShapmatError, KeyError):
    """An id was not present in its universe."""


class AlreadyExists(ShapmatError):
    """An id was appended twice to the same universe."""


class NotFitted(ShapmatError):
    """A fitted structure (e.g. the support tree) was required before fit."""


class UniverseMismatch(ShapmatError):
    """Two weight profiles were built over different player universes."""


class TreeMismatch(ShapmatError):
    """Two decision paths came from different fitted trees."""


class KindMismatch(ShapmatError):
    """Two profiles of incompatible kinds were compared."""


class KeyMismatch(ShapmatError):
    """Two value columns with different key sets were compared."""


class DegenerateEmbedding(ShapmatError):
    """A zero vector cannot be compared by angular alignment."""


class SupportTooLarge(ShapmatError):
    """Exact enumeration refused for an oversized support set."""

    def __init__(self, size: int, limit: int):
        super().__init__(f"support of size {size} exceeds enumeration limit {limit}")
        self.size = size
        self.limit = limit


class NoCompatibleAnchor(ShapmatError):
    """No label-compatible anchor is available for interpolation."""


class InvalidBudget(ShapmatError):
    """An anchor budget k outside [1, n] was requested."""


class TooLarge(ShapmatError):
    """An exact build was requested beyond the enumeration budget."""


class InsufficientSupport(ShapmatError):
    """Correlation metrics need at least two filtered entries."""


class AlignmentError(ShapmatError):
    """Two matrices do not share the same player/task layout."""


class ParseError(ShapmatError):
    """A dataset file failed validation; carries the offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(ShapmatError):
    """An experiment configuration value is out of range or inconsistent."""
