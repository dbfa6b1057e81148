"""Exception taxonomy shared across the package."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .keys import QueryKey


class SampleCacheError(Exception):
    """Base class for every error raised by this package."""


class StoreIOError(SampleCacheError):
    """A cache backend failed to read or write."""


class CorruptEntryError(StoreIOError):
    """An on-disk entry disagrees with the index or cannot be parsed."""


class NotACacheDirectoryError(SampleCacheError):
    """The given path does not hold a cache index."""


class DestinationNotEmptyError(SampleCacheError):
    """Slice destination already exists and is not empty."""


class LockHeldError(SampleCacheError):
    """The cache directory is owned by another live process (or handle)."""


class ReplayMissError(SampleCacheError):
    """A strict replay demanded a position beyond the stored sequence."""

    def __init__(self, key: QueryKey, position: int, stored_length: int) -> None:
        self.key = key
        self.position = position
        self.stored_length = stored_length
        preview = key.prompt if len(key.prompt) <= 60 else key.prompt[:57] + "..."
        super().__init__(
            f"replay miss for key {key.digest[:12]} (prompt {preview!r}): "
            f"position {position} requested but only {stored_length} stored"
        )


class ProviderError(SampleCacheError):
    """A provider could not serve a sample."""


class AuthFailureError(ProviderError):
    """Credentials were rejected; never retried."""


class RateLimitedError(ProviderError):
    """The provider kept rate-limiting past the retry budget."""


class ProviderUnavailableError(ProviderError):
    """Transient failures exhausted the retry budget."""


class MalformedResponseError(ProviderError):
    """The provider answered with an unparseable or incomplete body."""
