"""Exception hierarchy shared across the pipeline."""


class NovelcapError(Exception):
    """Base class for all pipeline errors."""


class CocoParseError(NovelcapError):
    """Raised when an input JSON file cannot be parsed.

    Carries the byte offset of the failure when known.
    """

    def __init__(self, message: str, *, path=None, offset: int | None = None):
        if path is not None:
            message = f"{path}: {message}"
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.path = path
        self.offset = offset


class IntegrityError(NovelcapError):
    """Raised when loaded records reference each other inconsistently."""


class RewriteError(NovelcapError):
    """Raised when a caption cannot be rewritten for a candidate class."""


class ScorerContractError(NovelcapError):
    """Raised when a scorer returns something that is not a log-distribution."""
