"""Model decorators that encode reuse constraints as reference types.

``Repeatable`` makes sampling replayable: every ``sample`` call for a prompt
returns a fresh cursor over that prompt's stored sequence, and positions past
the stored length are filled one at a time from the wrapped model (then
appended, mode permitting). ``Independent`` is the opposite commitment: all
callers share one consumptive cursor per prompt, so no position is ever
handed out twice. Layering the two expresses where responses must repeat,
where they must diverge, and (with ``Persistent``) what survives across
process runs, without touching the surrounding program logic.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Protocol

from .errors import ReplayMissError
from .keys import QueryKey
from .model import Model, Prompt, ResponseRecord, SampleCursor
from .persistence import CacheDirectory


class CacheMode(Enum):
    """What a repeatable layer is allowed to do with its store.

    - READ_WRITE: serve stored positions, fill and persist misses.
    - RECORD_ONLY: never read; every pull goes to the inner model and is
      appended, growing the sequence even past previously stored positions.
    - REPLAY_STRICT: read-only; a pull beyond the stored length is an error,
      which guarantees a replay costs nothing.
    - OFF: pass-through; the layer stays in the stack but forwards sampling
      to the inner model verbatim.
    """

    READ_WRITE = "read-write"
    RECORD_ONLY = "record-only"
    REPLAY_STRICT = "replay-strict"
    OFF = "off"


class CacheStore(Protocol):
    """Ordered, append-only record storage keyed by query digest."""

    def load(self, key: QueryKey) -> list[ResponseRecord]: ...

    def append(self, key: QueryKey, record: ResponseRecord) -> int: ...


class MemoryStore:
    """Volatile store; empty at construction."""

    def __init__(self) -> None:
        self._entries: dict[str, list[ResponseRecord]] = {}

    def load(self, key: QueryKey) -> list[ResponseRecord]:
        return list(self._entries.get(key.digest, ()))

    def append(self, key: QueryKey, record: ResponseRecord) -> int:
        sequence = self._entries.setdefault(key.digest, [])
        sequence.append(record)
        return len(sequence) - 1


class DirectoryStore:
    """Store backed by an owned (locked) cache directory."""

    def __init__(self, directory: CacheDirectory) -> None:
        self.directory = directory

    def load(self, key: QueryKey) -> list[ResponseRecord]:
        return self.directory.load_entry(key)

    def append(self, key: QueryKey, record: ResponseRecord) -> int:
        return self.directory.append_response(key, record)


class _StoredSequence:
    """Cursor source for one key of a repeatable layer."""

    __slots__ = ("_model", "_key", "_prompt")

    def __init__(self, model: Repeatable, key: QueryKey, prompt: Prompt) -> None:
        self._model = model
        self._key = key
        self._prompt = prompt

    def fetch(self, position: int) -> ResponseRecord:
        return self._model._serve(self._key, self._prompt, position)


class Repeatable(Model):
    """Replayable reference: same prompt, same sequence, for every caller.

    All misses for a key are filled through one shared cursor into the inner
    model, so interleaved outer cursors never burn separate inner samples on
    the same position. ``hits``/``fills`` count served pulls for telemetry.
    """

    def __init__(
        self,
        inner: Model,
        store: CacheStore | None = None,
        mode: CacheMode = CacheMode.READ_WRITE,
    ) -> None:
        self.inner = inner
        self.store: CacheStore = store if store is not None else MemoryStore()
        self.mode = mode
        self.hits = 0
        self.fills = 0
        self._sequences: dict[str, list[ResponseRecord]] = {}
        self._fill_cursors: dict[str, SampleCursor] = {}

    def key_for(self, prompt: Prompt) -> QueryKey:
        return self.inner.key_for(prompt)

    def sample(self, prompt: Prompt) -> SampleCursor:
        if self.mode is CacheMode.OFF:
            return self.inner.sample(prompt)
        key = self.key_for(prompt)
        return SampleCursor(key, _StoredSequence(self, key, prompt))

    def _records(self, key: QueryKey) -> list[ResponseRecord]:
        sequence = self._sequences.get(key.digest)
        if sequence is None:
            sequence = list(self.store.load(key))
            self._sequences[key.digest] = sequence
        return sequence

    def _fill_cursor(self, key: QueryKey, prompt: Prompt) -> SampleCursor:
        cursor = self._fill_cursors.get(key.digest)
        if cursor is None:
            cursor = self.inner.sample(prompt)
            self._fill_cursors[key.digest] = cursor
        return cursor

    def _serve(self, key: QueryKey, prompt: Prompt, position: int) -> ResponseRecord:
        if self.mode is CacheMode.RECORD_ONLY:
            record = next(self._fill_cursor(key, prompt))
            self.store.append(key, record)
            self.fills += 1
            return record
        sequence = self._records(key)
        if position < len(sequence):
            self.hits += 1
            return sequence[position].as_cache_hit()
        if self.mode is CacheMode.REPLAY_STRICT:
            raise ReplayMissError(key, position, len(sequence))
        if position != len(sequence):
            raise AssertionError(
                f"cursor at position {position} ahead of stored length {len(sequence)}"
            )
        record = next(self._fill_cursor(key, prompt))
        self.store.append(key, record)
        sequence.append(record)
        self.fills += 1
        return record


class InMemory(Repeatable):
    """Repeatable reference over a fresh volatile store.

    Constructing one opens a new repeatability scope: pulls repeat within it
    and the store vanishes with the instance.
    """

    def __init__(self, inner: Model) -> None:
        super().__init__(inner, MemoryStore(), CacheMode.READ_WRITE)


class Persistent(Repeatable):
    """Repeatable reference whose store is an owned on-disk cache directory.

    Opening takes the directory lock (one owner process at a time); close the
    handle, or use it as a context manager, to release it.
    """

    def __init__(
        self,
        inner: Model,
        directory: str | Path,
        mode: CacheMode = CacheMode.READ_WRITE,
        *,
        force_unlock: bool = False,
    ) -> None:
        self._directory = CacheDirectory(
            directory, lock=True, create=True, force_unlock=force_unlock
        )
        super().__init__(inner, DirectoryStore(self._directory), mode)

    @property
    def directory(self) -> CacheDirectory:
        return self._directory

    def close(self) -> None:
        self._directory.close()

    def __enter__(self) -> Persistent:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class Independent(Model):
    """Consumptive reference: every caller advances the same sequence.

    ``sample`` hands back the *same* cursor for the same prompt, so positions
    consumed by one holder are skipped by all others. The layer neither
    generates nor stores responses; it only holds consumption positions, and
    those reset with the instance (they do not persist across runs -- an
    inner persistent layer is what carries the sequence itself forward).
    """

    def __init__(self, inner: Model) -> None:
        self.inner = inner
        self._cursors: dict[str, SampleCursor] = {}

    def key_for(self, prompt: Prompt) -> QueryKey:
        return self.inner.key_for(prompt)

    def sample(self, prompt: Prompt) -> SampleCursor:
        key = self.key_for(prompt)
        cursor = self._cursors.get(key.digest)
        if cursor is None:
            cursor = self.inner.sample(prompt)
            self._cursors[key.digest] = cursor
        return cursor
