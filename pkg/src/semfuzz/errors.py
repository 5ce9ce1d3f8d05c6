"""Exception types shared across the fuzzer."""


class SemfuzzError(Exception):
    """Base class for all semfuzz-specific errors."""


class ParseError(SemfuzzError):
    """A manifest or schema file could not be parsed."""


class ValidationError(SemfuzzError):
    """A manifest violated a structural invariant (dangling edge, bad enum)."""


class UnknownFunction(SemfuzzError):
    """A function id does not exist in the manifest."""


class UnknownSite(SemfuzzError):
    """An API call site does not belong to the given manifest."""


class HarnessError(SemfuzzError):
    """A target raised something other than a guard violation."""


class NotACrash(SemfuzzError):
    """Crash deduplication was asked about a non-crashing record."""


class ProviderError(SemfuzzError):
    """A remote embedding or generation provider failed or timed out."""


class DuplicateId(SemfuzzError):
    """An id was inserted twice into the novelty index."""


class InsufficientSamples(SemfuzzError):
    """Not enough fitted samples to answer a PCA query."""


class UnknownFormat(SemfuzzError):
    """No validator is registered for the requested input format."""


class EmptyPool(SemfuzzError):
    """Seed selection from an empty pool."""


class UnknownSeed(SemfuzzError):
    """Energy update for a seed id not present in the pool."""


class EmptyList(SemfuzzError):
    """Inspirational-seed selection over an empty entry list."""


class EmptyWindow(SemfuzzError):
    """Valid-input rate requested for a window with no generated candidates."""


class ConfigError(SemfuzzError):
    """A campaign configuration is inconsistent or incomplete."""


class IoError(SemfuzzError):
    """A queue or report file operation failed at the OS level."""
