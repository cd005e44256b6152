"""Exception hierarchy shared across the engine.

The CLI maps each family to an exit code: ``DataError`` -> 4,
``ProviderError`` -> 3, ``ConfigError`` -> 2.
"""

from __future__ import annotations


class CkgError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CkgError):
    pass


class DataError(CkgError):
    pass


class InvalidEmbedding(DataError):
    pass


class EmptyText(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyDocument(DataError):
    pass


class UnknownNode(DataError):
    pass


class SelfLoop(DataError):
    pass


class FormatVersionMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


class InconsistentInputs(DataError):
    pass


class DatasetError(DataError):
    pass


class NoRelevantDocs(DatasetError):
    pass


class QuestionKindMismatch(DataError):
    pass


class ProviderError(CkgError):
    pass


class ProviderUnavailable(ProviderError):
    pass


class MalformedAfterRetries(ProviderError):
    """Raised when every attempt (initial + retries) failed validation.

    ``attempts`` holds the raw model text of each attempt, in order.
    """

    def __init__(self, kind: str, attempts: list[str], reasons: list[str]):
        self.kind = kind
        self.attempts = list(attempts)
        self.reasons = list(reasons)
        last = reasons[-1] if reasons else "no attempts"
        super().__init__(
            f"{kind}: no valid response after {len(attempts)} attempt(s); last error: {last}"
        )
