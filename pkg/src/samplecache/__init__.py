"""Reuse-aware response caching for LLM sampling.

Sampling is modeled as infinite lazy sequences consumed through cursors.
Decorators turn a model reference into a *repeatable* one (every caller
replays the same stored sequence) or an *independent* one (all callers share
a consumptive cursor, so no draw is reused), and a persistent backend makes
recorded sequences replayable across runs at zero provider cost.
"""

from .caching import (
    CacheMode,
    CacheStore,
    DirectoryStore,
    Independent,
    InMemory,
    MemoryStore,
    Persistent,
    Repeatable,
)
from .errors import (
    AuthFailureError,
    CorruptEntryError,
    DestinationNotEmptyError,
    LockHeldError,
    MalformedResponseError,
    NotACacheDirectoryError,
    ProviderError,
    ProviderUnavailableError,
    RateLimitedError,
    ReplayMissError,
    SampleCacheError,
    StoreIOError,
)
from .keys import QueryKey, canonical_bytes, canonical_key
from .model import (
    Model,
    Prompt,
    ResponseRecord,
    SampleCursor,
    SamplingParams,
    take,
)
from .persistence import (
    CacheDirectory,
    CacheStats,
    SliceReport,
    VerifyReport,
    cache_stats,
    slice_cache,
    verify_cache,
)
from .providers import (
    DEFAULT_PRICING,
    HttpProvider,
    HttpProviderConfig,
    Pricing,
    ScriptedProvider,
    UsageReport,
    cost_of,
    estimate_tokens,
    format_cost,
)

__version__ = "0.1.0"

__all__ = [
    "AuthFailureError",
    "CacheDirectory",
    "CacheMode",
    "CacheStats",
    "CacheStore",
    "CorruptEntryError",
    "DEFAULT_PRICING",
    "DestinationNotEmptyError",
    "DirectoryStore",
    "HttpProvider",
    "HttpProviderConfig",
    "Independent",
    "InMemory",
    "LockHeldError",
    "MalformedResponseError",
    "MemoryStore",
    "Model",
    "NotACacheDirectoryError",
    "Persistent",
    "Pricing",
    "Prompt",
    "ProviderError",
    "ProviderUnavailableError",
    "QueryKey",
    "RateLimitedError",
    "Repeatable",
    "ReplayMissError",
    "ResponseRecord",
    "SampleCacheError",
    "SampleCursor",
    "SamplingParams",
    "ScriptedProvider",
    "SliceReport",
    "StoreIOError",
    "UsageReport",
    "VerifyReport",
    "cache_stats",
    "canonical_bytes",
    "canonical_key",
    "cost_of",
    "estimate_tokens",
    "format_cost",
    "slice_cache",
    "take",
    "verify_cache",
]
