"""Exception types shared across the package."""


class CrtpruneError(Exception):
    """Base class for all package-specific errors."""


class DomainError(CrtpruneError):
    """Argument outside the domain where the operation is defined."""


class OrderError(CrtpruneError):
    """Derivative order not supported."""


class ConvergenceError(CrtpruneError):
    """Iterative solver failed to reach its residual target."""


class TruncationError(CrtpruneError):
    """A discrete law could not be truncated to the requested tail mass."""


class PositionError(CrtpruneError):
    """Invalid node or edge position on a tree."""


class EmptySpanError(CrtpruneError):
    """Span requested for an empty set of marked leaves."""


class HorizonError(CrtpruneError):
    """Prune level beyond the mark horizon of a marked tree."""


class EmbeddingError(CrtpruneError):
    """Retention flags do not describe a sub-tree (root dropped or a kept
    node hangs from a removed one)."""


class DegenerateError(CrtpruneError):
    """A sampled object degenerated (e.g. no marks for the smallest rate)."""


class ParseError(CrtpruneError):
    """Serialization parse failure; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ConfigError(CrtpruneError):
    """Config file failure; carries the line number when known."""

    def __init__(self, message: str, line: int = 0):
        if line:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
