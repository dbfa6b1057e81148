"""On-disk cache directories.

Layout::

    <root>/
        index            one header line, then one line per key:
                         "<digest>\\t<filename>\\t<record count>"
        entries/<digest> line 1: key manifest (JSON, full canonical key)
                         line k+1: response record k-1 (JSON)
        LOCK             present while a process owns the directory

Everything is UTF-8 with LF line endings. Entry files are append-only: line
k+1 always holds sequence position k-1, and record lines re-serialize
byte-identically, which is what makes recorded directories bit-reproducible
and prefix checks meaningful. The index header pins the format version and
hash algorithm so a future migration is detectable instead of silent.

One process owns a directory at a time, enforced through the LOCK file. The
lock records the owner pid and process start time; a lock whose owner is
gone is treated as stale and reclaimed, anything else fails loudly (with a
``force`` escape hatch for operators).
"""

from __future__ import annotations

import json
import os
import socket
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import psutil

from .errors import (
    CorruptEntryError,
    DestinationNotEmptyError,
    LockHeldError,
    NotACacheDirectoryError,
    StoreIOError,
)
from .keys import HASH_ALGORITHM, QueryKey, canonical_key
from .model import ResponseRecord, SamplingParams

INDEX_NAME = "index"
ENTRIES_DIR = "entries"
LOCK_NAME = "LOCK"
INDEX_HEADER = f"samplecache-cache v1 {HASH_ALGORITHM}"

_RECORD_FIELDS = (
    "text",
    "prompt_tokens",
    "completion_tokens",
    "api_time_ms",
    "provider_id",
    "created_at",
)


def _dump_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def manifest_line(key: QueryKey) -> str:
    p = key.params
    return _dump_json(
        {
            "digest": key.digest,
            "provider_id": key.provider_id,
            "model_id": p.model_id,
            "temperature": p.temperature,
            "top_p": p.top_p,
            "max_tokens": p.max_tokens,
            "extra": dict(p.extra),
            "prompt": key.prompt,
        }
    )


def parse_manifest(line: str) -> tuple[QueryKey, str]:
    """Parse a manifest line into (recomputed key, digest the line claims)."""
    try:
        data = json.loads(line)
        params = SamplingParams(
            model_id=data["model_id"],
            temperature=data["temperature"],
            top_p=data["top_p"],
            max_tokens=data["max_tokens"],
            extra=tuple((k, v) for k, v in data["extra"].items()),
        )
        key = canonical_key(data["provider_id"], params, data["prompt"])
        declared = data["digest"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptEntryError(f"bad manifest line: {exc}") from exc
    return key, declared


def record_line(record: ResponseRecord) -> str:
    return _dump_json(
        {
            "text": record.text,
            "prompt_tokens": record.prompt_tokens,
            "completion_tokens": record.completion_tokens,
            "api_time_ms": record.api_time_ms,
            "provider_id": record.provider_id,
            "created_at": record.created_at,
        }
    )


def parse_record(line: str) -> ResponseRecord:
    try:
        data = json.loads(line)
        kwargs = {name: data[name] for name in _RECORD_FIELDS}
        if not isinstance(kwargs["text"], str):
            raise TypeError("text must be a string")
        for name in ("prompt_tokens", "completion_tokens", "api_time_ms"):
            if not isinstance(kwargs[name], int) or isinstance(kwargs[name], bool):
                raise TypeError(f"{name} must be an integer")
        return ResponseRecord(**kwargs)
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptEntryError(f"bad record line: {exc}") from exc


class DirectoryLock:
    """Single-owner lock for one cache directory."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._held = True

    @classmethod
    def acquire(cls, root: Path, force: bool = False) -> DirectoryLock:
        path = root / LOCK_NAME
        info = {
            "pid": os.getpid(),
            "proc_created": psutil.Process().create_time(),
            "host": socket.gethostname(),
        }
        for attempt in range(2):
            try:
                with open(path, "x", encoding="utf-8", newline="") as fh:
                    fh.write(_dump_json(info) + "\n")
                return cls(path)
            except FileExistsError:
                owner = cls._read_owner(path)
                if attempt == 0 and (force or cls._is_stale(owner)):
                    path.unlink(missing_ok=True)
                    continue
                pid = owner.get("pid") if owner else "unknown"
                raise LockHeldError(
                    f"cache directory {root} is locked (owner pid {pid}); "
                    f"use force-unlock only if you are sure the owner is gone"
                )
        raise LockHeldError(f"could not acquire lock on {root}")

    @staticmethod
    def _read_owner(path: Path) -> dict | None:
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            return None

    @staticmethod
    def _is_stale(owner: dict | None) -> bool:
        # An unreadable lock has an unknown owner: keep failing loudly.
        if not owner or not isinstance(owner.get("pid"), int):
            return False
        pid = owner["pid"]
        if not psutil.pid_exists(pid):
            return True
        try:
            created = psutil.Process(pid).create_time()
        except psutil.NoSuchProcess:
            return True
        recorded = owner.get("proc_created")
        if not isinstance(recorded, (int, float)):
            return False
        # Same pid but a different start time means the pid was recycled.
        return abs(created - recorded) > 1.5

    def release(self) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False


class CacheDirectory:
    """Handle to one on-disk cache directory.

    ``lock=True`` takes ownership (required for appends); read-only tooling
    opens with ``lock=False`` and must not write. Close handles explicitly or
    use the context-manager form so the lock is released.
    """

    def __init__(
        self,
        root: str | Path,
        *,
        lock: bool,
        create: bool = False,
        force_unlock: bool = False,
    ) -> None:
        self.root = Path(root)
        self._lock: DirectoryLock | None = None
        index_path = self.root / INDEX_NAME
        try:
            if not index_path.exists():
                if not create:
                    raise NotACacheDirectoryError(f"{self.root} has no cache index")
                (self.root / ENTRIES_DIR).mkdir(parents=True, exist_ok=True)
                index_path.write_text(INDEX_HEADER + "\n", encoding="utf-8", newline="")
        except OSError as exc:
            raise StoreIOError(f"cannot initialize cache directory {self.root}: {exc}") from exc
        if lock:
            self._lock = DirectoryLock.acquire(self.root, force=force_unlock)
        try:
            self._index = self._read_index()
        except Exception:
            self.close()
            raise

    # index maps digest -> [filename, record count], in file order
    def _read_index(self) -> dict[str, list]:
        path = self.root / INDEX_NAME
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise StoreIOError(f"cannot read index in {self.root}: {exc}") from exc
        if not lines or not lines[0].startswith("samplecache-cache "):
            raise CorruptEntryError(f"unrecognized index header in {self.root}")
        if lines[0] != INDEX_HEADER:
            raise CorruptEntryError(
                f"unsupported cache format or hash algorithm: {lines[0]!r}"
            )
        index: dict[str, list] = {}
        for line in lines[1:]:
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorruptEntryError(f"bad index line: {line!r}")
            digest, filename, count = parts
            try:
                index[digest] = [filename, int(count)]
            except ValueError as exc:
                raise CorruptEntryError(f"bad index count: {line!r}") from exc
        return index

    def _write_index(self) -> None:
        lines = [INDEX_HEADER]
        lines.extend(
            f"{digest}\t{filename}\t{count}" for digest, (filename, count) in self._index.items()
        )
        tmp = self.root / (INDEX_NAME + ".tmp")
        try:
            tmp.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")
            os.replace(tmp, self.root / INDEX_NAME)
        except OSError as exc:
            raise StoreIOError(f"cannot write index in {self.root}: {exc}") from exc

    def entry_path(self, digest: str) -> Path:
        return self.root / ENTRIES_DIR / digest

    def _read_entry_lines(self, digest: str) -> list[str]:
        try:
            with open(self.entry_path(digest), "r", encoding="utf-8", newline="") as fh:
                return fh.read().splitlines()
        except OSError as exc:
            raise StoreIOError(f"cannot read entry {digest}: {exc}") from exc

    def digests(self) -> list[str]:
        return list(self._index)

    def count(self, key: QueryKey) -> int:
        entry = self._index.get(key.digest)
        return entry[1] if entry else 0

    def keys(self) -> Iterator[QueryKey]:
        """Keys in index order, rebuilt from the entry manifests."""
        for digest in self._index:
            key, _ = parse_manifest(self._read_entry_lines(digest)[0])
            yield key

    def load_entry(self, key: QueryKey) -> list[ResponseRecord]:
        """Full stored sequence for ``key`` in position order; [] when absent."""
        entry = self._index.get(key.digest)
        if entry is None:
            return []
        lines = self._read_entry_lines(key.digest)
        if not lines:
            raise CorruptEntryError(f"entry {key.digest} is empty")
        _, declared = parse_manifest(lines[0])
        if declared != key.digest:
            raise CorruptEntryError(
                f"entry {key.digest} manifest claims digest {declared}"
            )
        records = [parse_record(line) for line in lines[1:]]
        if len(records) != entry[1]:
            raise CorruptEntryError(
                f"entry {key.digest}: index says {entry[1]} records, file has {len(records)}"
            )
        return records

    def append_response(self, key: QueryKey, record: ResponseRecord) -> int:
        """Durably append one record; returns its sequence position."""
        if self._lock is None:
            raise StoreIOError("cache directory opened read-only; cannot append")
        digest = key.digest
        path = self.entry_path(digest)
        try:
            if digest not in self._index:
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    fh.write(manifest_line(key) + "\n")
                    fh.write(record_line(record) + "\n")
                self._index[digest] = [digest, 1]
            else:
                with open(path, "a", encoding="utf-8", newline="") as fh:
                    fh.write(record_line(record) + "\n")
                self._index[digest][1] += 1
        except OSError as exc:
            raise StoreIOError(f"cannot append to entry {digest}: {exc}") from exc
        self._write_index()
        return self._index[digest][1] - 1

    def close(self) -> None:
        if self._lock is not None:
            self._lock.release()
            self._lock = None

    def __enter__(self) -> CacheDirectory:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


@dataclass(frozen=True)
class SliceReport:
    keys_copied: int
    records_copied: int


def slice_cache(
    src: str | Path,
    dst: str | Path,
    selector: Callable[[QueryKey], bool] = lambda key: True,
    max_per_key: int | None = None,
    *,
    force_unlock: bool = False,
) -> SliceReport:
    """Copy selected entries (first ``max_per_key`` records each) into ``dst``.

    The destination becomes a valid, self-contained cache directory: any
    replay whose demand stays within the slice reads bytes identical to the
    source, because record lines are copied verbatim. ``dst`` must be absent
    or an empty directory.
    """
    if max_per_key is not None and max_per_key < 1:
        raise ValueError(f"max_per_key must be >= 1, got {max_per_key}")
    dst_path = Path(dst)
    if dst_path.exists() and any(dst_path.iterdir()):
        raise DestinationNotEmptyError(f"slice destination {dst_path} is not empty")
    keys_copied = records_copied = 0
    with CacheDirectory(src, lock=True, force_unlock=force_unlock) as src_dir:
        with CacheDirectory(dst_path, lock=True, create=True) as dst_dir:
            for digest, (_, count) in src_dir._index.items():
                lines = src_dir._read_entry_lines(digest)
                key, _ = parse_manifest(lines[0])
                if not selector(key):
                    continue
                cap = count if max_per_key is None else min(count, max_per_key)
                body = "\n".join(lines[: cap + 1]) + "\n"
                try:
                    with open(dst_dir.entry_path(digest), "w", encoding="utf-8", newline="") as fh:
                        fh.write(body)
                except OSError as exc:
                    raise StoreIOError(f"cannot write sliced entry {digest}: {exc}") from exc
                dst_dir._index[digest] = [digest, cap]
                keys_copied += 1
                records_copied += cap
            dst_dir._write_index()
    return SliceReport(keys_copied=keys_copied, records_copied=records_copied)


@dataclass(frozen=True)
class Defect:
    kind: str
    subject: str
    detail: str


@dataclass(frozen=True)
class VerifyReport:
    defects: tuple[Defect, ...]

    @property
    def ok(self) -> bool:
        return not self.defects


def verify_cache(root: str | Path) -> VerifyReport:
    """Check index/entry agreement and line well-formedness. Read-only.

    Problems come back as report content; the only raised error is for a
    path that is not a cache directory at all.
    """
    root = Path(root)
    index_path = root / INDEX_NAME
    if not index_path.exists():
        raise NotACacheDirectoryError(f"{root} has no cache index")
    defects: list[Defect] = []
    try:
        lines = index_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        return VerifyReport((Defect("index-unreadable", str(index_path), str(exc)),))
    if not lines or lines[0] != INDEX_HEADER:
        defects.append(Defect("bad-header", INDEX_NAME, repr(lines[0] if lines else "")))
        return VerifyReport(tuple(defects))
    indexed: dict[str, int] = {}
    for line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != 3 or not parts[2].isdigit():
            defects.append(Defect("bad-index-line", INDEX_NAME, repr(line)))
            continue
        digest, filename, count = parts[0], parts[1], int(parts[2])
        if digest in indexed:
            defects.append(Defect("duplicate-digest", digest, "listed twice in index"))
            continue
        if filename != digest:
            defects.append(Defect("bad-index-line", digest, f"filename {filename!r}"))
            continue
        indexed[digest] = count
        entry_path = root / ENTRIES_DIR / digest
        if not entry_path.exists():
            defects.append(Defect("missing-entry-file", digest, str(entry_path)))
            continue
        try:
            with open(entry_path, "r", encoding="utf-8", newline="") as fh:
                entry_lines = fh.read().splitlines()
        except OSError as exc:
            defects.append(Defect("entry-unreadable", digest, str(exc)))
            continue
        if not entry_lines:
            defects.append(Defect("count-mismatch", digest, f"expected {count} records, file empty"))
            continue
        try:
            key, declared = parse_manifest(entry_lines[0])
        except CorruptEntryError as exc:
            defects.append(Defect("bad-manifest", digest, str(exc)))
            continue
        if not (declared == digest == key.digest):
            defects.append(
                Defect(
                    "digest-mismatch",
                    digest,
                    f"manifest claims {declared}, canonical form gives {key.digest}",
                )
            )
        actual = len(entry_lines) - 1
        if actual != count:
            defects.append(
                Defect("count-mismatch", digest, f"index says {count} records, file has {actual}")
            )
        for i, line in enumerate(entry_lines[1:]):
            try:
                parse_record(line)
            except CorruptEntryError as exc:
                defects.append(Defect("bad-record", digest, f"position {i}: {exc}"))
    entries_dir = root / ENTRIES_DIR
    if entries_dir.is_dir():
        for path in sorted(entries_dir.iterdir()):
            if path.name not in indexed:
                defects.append(Defect("orphan-entry", path.name, "entry file not in index"))
    return VerifyReport(tuple(defects))


@dataclass(frozen=True)
class CacheStats:
    keys: int = 0
    records: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    bytes: int = 0


def cache_stats(root: str | Path) -> CacheStats:
    """Exact aggregation over all indexed entries. Read-only."""
    root = Path(root)
    with CacheDirectory(root, lock=False) as directory:
        keys = records = prompt_tokens = completion_tokens = size = 0
        for digest in directory.digests():
            keys += 1
            lines = directory._read_entry_lines(digest)
            for line in lines[1:]:
                record = parse_record(line)
                records += 1
                prompt_tokens += record.prompt_tokens
                completion_tokens += record.completion_tokens
            try:
                size += directory.entry_path(digest).stat().st_size
            except OSError as exc:
                raise StoreIOError(f"cannot stat entry {digest}: {exc}") from exc
    return CacheStats(
        keys=keys,
        records=records,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        bytes=size,
    )
