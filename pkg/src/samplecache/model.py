"""Sampling as an infinite lazy sequence of responses.

A model maps a prompt to a conceptually unbounded sequence of completions
drawn from one distribution. Consumption happens exclusively through
cursors: a cursor yields each sequence position exactly once, in order, and
creating one performs no provider calls and no cache writes. Which sequence
a cursor reads, and where it starts, is what the wrapping decorators vary.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from itertools import islice
from typing import TYPE_CHECKING, Protocol

if TYPE_CHECKING:
    from .keys import QueryKey

# Prompts are plain strings with byte-exact identity: no trimming, no
# normalization. An empty prompt is legal and distinct from " ".
Prompt = str

Scalar = str | int | float | bool | None


@dataclass(frozen=True)
class SamplingParams:
    """Distribution-identity parameters.

    Changing any field means sampling a different distribution, so all of
    them participate in the cache key. ``extra`` holds provider-specific
    knobs; it is normalized to a key-sorted tuple so that insertion order
    never leaks into identity.
    """

    model_id: str
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 256
    extra: tuple[tuple[str, Scalar], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(self, "top_p", float(self.top_p))
        object.__setattr__(self, "max_tokens", int(self.max_tokens))
        items = self.extra.items() if isinstance(self.extra, dict) else tuple(self.extra)
        object.__setattr__(self, "extra", tuple(sorted((str(k), v) for k, v in items)))
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class ResponseRecord:
    """One sampled completion plus what it cost to obtain.

    Usage counters describe this particular pull: a record served out of a
    cache carries zeros because no provider was contacted for it, while the
    stored copy keeps the original counters from when it was generated.
    """

    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    api_time_ms: int = 0
    provider_id: str = ""
    created_at: str = ""

    def __post_init__(self) -> None:
        for name in ("prompt_tokens", "completion_tokens", "api_time_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def as_cache_hit(self) -> ResponseRecord:
        """Copy of this record as served from a cache: same text, zero cost."""
        return replace(self, prompt_tokens=0, completion_tokens=0, api_time_ms=0)


class SampleSource(Protocol):
    """The sequence a cursor reads. ``fetch(i)`` materializes position i."""

    def fetch(self, position: int) -> ResponseRecord: ...


class SampleCursor:
    """A consuming position over one response sequence.

    Each successful pull yields the next position exactly once and advances
    by one; a failed pull does not advance, so retrying re-attempts the same
    position. Cursors are not copyable: duplicating consumption state would
    silently hand out the same positions twice. Get a new cursor from the
    owning model's ``sample`` instead.
    """

    __slots__ = ("key", "position", "_source")

    def __init__(self, key: QueryKey, source: SampleSource, position: int = 0) -> None:
        self.key = key
        self.position = position
        self._source = source

    def __iter__(self) -> SampleCursor:
        return self

    def __next__(self) -> ResponseRecord:
        record = self._source.fetch(self.position)
        self.position += 1
        return record

    def take(self, n: int) -> list[ResponseRecord]:
        return take(self, n)

    def __copy__(self):
        raise TypeError("cursors are not copyable; call sample() for a new one")

    __deepcopy__ = __copy__

    def __repr__(self) -> str:
        return f"SampleCursor(key={self.key.digest[:12]}, position={self.position})"


def take(cursor: SampleCursor, n: int) -> list[ResponseRecord]:
    """Pull exactly ``n`` records, advancing the cursor by ``n``.

    Errors raised while materializing an element propagate at the offending
    index and leave the cursor positioned to retry that same element.
    """
    if n < 0:
        raise ValueError(f"take expects n >= 0, got {n}")
    return list(islice(cursor, n))


class Model(ABC):
    """Shared contract for providers and decorators.

    Implementations guarantee that elements *within* one cursor's sequence
    are independent draws (each pull maps to a distinct sequence position;
    duplicate texts remain possible). How sequences relate *across* sample
    calls is each implementation's defining behavior.
    """

    @abstractmethod
    def sample(self, prompt: Prompt) -> SampleCursor:
        """Return a cursor over an infinite response sequence for ``prompt``."""

    @abstractmethod
    def key_for(self, prompt: Prompt) -> QueryKey:
        """Canonical identity of the distribution this prompt samples."""

    def sample_batch(self, prompt: Prompt, n: int) -> list[ResponseRecord]:
        """Exactly ``take(self.sample(prompt), n)``; providers may batch it."""
        if n < 1:
            raise ValueError(f"sample_batch expects n >= 1, got {n}")
        return take(self.sample(prompt), n)
