"""On-disk format: load/append round-trips, slicing, verification, stats,
and the directory lock."""

import json
import os

import pytest

from samplecache import (
    CacheDirectory,
    DestinationNotEmptyError,
    LockHeldError,
    NotACacheDirectoryError,
    ResponseRecord,
    SamplingParams,
    ScriptedProvider,
    cache_stats,
    canonical_key,
    slice_cache,
    verify_cache,
)
from samplecache.harness import GAME_TEMPLATE
from samplecache.persistence import DirectoryLock

PARAMS = SamplingParams(model_id="m")


def key_for(prompt):
    return canonical_key("prov", PARAMS, prompt)


def record(text, **kwargs):
    defaults = dict(prompt_tokens=2, completion_tokens=1, api_time_ms=5,
                    provider_id="prov", created_at="1970-01-01T00:00:00+00:00")
    defaults.update(kwargs)
    return ResponseRecord(text=text, **defaults)


@pytest.fixture
def cache_dir(tmp_path):
    with CacheDirectory(tmp_path / "cache", lock=True, create=True) as d:
        yield d


class TestLoadAppend:
    def test_absent_key_loads_empty(self, cache_dir):
        assert cache_dir.load_entry(key_for("nope")) == []

    def test_append_positions_are_sequential(self, cache_dir):
        key = key_for("p")
        assert cache_dir.append_response(key, record("a")) == 0
        assert cache_dir.append_response(key, record("b")) == 1
        assert cache_dir.append_response(key, record("c")) == 2
        loaded = cache_dir.load_entry(key)
        assert [r.text for r in loaded] == ["a", "b", "c"]

    def test_appends_survive_reopen(self, tmp_path):
        path = tmp_path / "cache"
        key = key_for("p")
        with CacheDirectory(path, lock=True, create=True) as d:
            d.append_response(key, record("a"))
        with CacheDirectory(path, lock=True) as d:
            assert [r.text for r in d.load_entry(key)] == ["a"]

    def test_append_never_rewrites_earlier_lines(self, cache_dir):
        key = key_for("p")
        cache_dir.append_response(key, record("a"))
        path = cache_dir.entry_path(key.digest)
        before = path.read_bytes()
        cache_dir.append_response(key, record("b"))
        after = path.read_bytes()
        assert after[: len(before)] == before

    def test_read_only_handle_cannot_append(self, game_cache):
        from samplecache import StoreIOError

        with CacheDirectory(game_cache, lock=False) as d:
            with pytest.raises(StoreIOError):
                d.append_response(key_for("p"), record("a"))

    def test_seeded_demo_cache_contents(self, game_cache):
        provider = ScriptedProvider()
        key = provider.key_for(GAME_TEMPLATE.format(user="Alice", interval="[1, 1000]"))
        with CacheDirectory(game_cache, lock=False) as d:
            assert [r.text for r in d.load_entry(key)] == ["2", "68", "109", "12"]

    def test_open_missing_dir_fails(self, tmp_path):
        with pytest.raises(NotACacheDirectoryError):
            CacheDirectory(tmp_path / "nothing", lock=False)


class TestSlice:
    def test_selector_and_cap(self, game_cache, tmp_path):
        report = slice_cache(
            game_cache, tmp_path / "out", lambda k: "Alice" in k.prompt, max_per_key=2
        )
        assert (report.keys_copied, report.records_copied) == (2, 4)
        with CacheDirectory(tmp_path / "out", lock=False) as d:
            provider = ScriptedProvider()
            alice1 = provider.key_for(GAME_TEMPLATE.format(user="Alice", interval="[1, 1000]"))
            alice2 = provider.key_for(GAME_TEMPLATE.format(user="Alice", interval="[1001, 2000]"))
            assert [r.text for r in d.load_entry(alice1)] == ["2", "68"]
            assert [r.text for r in d.load_entry(alice2)] == ["1393", "1002"]

    def test_empty_selection_gives_valid_empty_cache(self, game_cache, tmp_path):
        report = slice_cache(game_cache, tmp_path / "out", lambda k: False)
        assert (report.keys_copied, report.records_copied) == (0, 0)
        assert verify_cache(tmp_path / "out").ok

    def test_nonempty_destination_rejected(self, game_cache, tmp_path):
        dst = tmp_path / "out"
        dst.mkdir()
        (dst / "junk").write_text("x")
        with pytest.raises(DestinationNotEmptyError):
            slice_cache(game_cache, dst)
        assert not (dst / "index").exists()

    def test_full_slice_preserves_stats(self, game_cache, tmp_path):
        slice_cache(game_cache, tmp_path / "out")
        assert cache_stats(tmp_path / "out") == cache_stats(game_cache)

    def test_sliced_bytes_match_source(self, game_cache, tmp_path):
        slice_cache(game_cache, tmp_path / "out")
        with CacheDirectory(game_cache, lock=False) as src:
            for digest in src.digests():
                src_bytes = src.entry_path(digest).read_bytes()
                dst_bytes = (tmp_path / "out" / "entries" / digest).read_bytes()
                assert dst_bytes == src_bytes

    def test_slice_verifies(self, game_cache, tmp_path):
        slice_cache(game_cache, tmp_path / "out", lambda k: "Bob" in k.prompt, max_per_key=1)
        assert verify_cache(tmp_path / "out").ok


class TestVerify:
    def test_fresh_cache_is_ok(self, game_cache):
        assert verify_cache(game_cache).ok

    def test_truncated_entry_detected(self, game_cache):
        with CacheDirectory(game_cache, lock=False) as d:
            digest = d.digests()[0]
            path = d.entry_path(digest)
        lines = path.read_text(encoding="utf-8").splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        report = verify_cache(game_cache)
        assert not report.ok
        defect = next(d for d in report.defects if d.kind == "count-mismatch")
        assert defect.subject == digest
        assert "4 records" in defect.detail and "has 3" in defect.detail

    def test_manifest_digest_mismatch_detected(self, game_cache):
        with CacheDirectory(game_cache, lock=False) as d:
            digest = d.digests()[0]
            path = d.entry_path(digest)
        lines = path.read_text(encoding="utf-8").splitlines()
        manifest = json.loads(lines[0])
        manifest["prompt"] = manifest["prompt"] + " tampered"
        lines[0] = json.dumps(manifest, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        report = verify_cache(game_cache)
        assert any(d.kind == "digest-mismatch" for d in report.defects)

    def test_malformed_record_detected(self, game_cache):
        with CacheDirectory(game_cache, lock=False) as d:
            path = d.entry_path(d.digests()[0])
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("not json\n")
        report = verify_cache(game_cache)
        kinds = {d.kind for d in report.defects}
        assert "bad-record" in kinds and "count-mismatch" in kinds

    def test_orphan_entry_detected(self, game_cache):
        (game_cache / "entries" / ("f" * 64)).write_text("{}\n", encoding="utf-8")
        report = verify_cache(game_cache)
        assert any(d.kind == "orphan-entry" for d in report.defects)

    def test_missing_entry_file_detected(self, game_cache):
        with CacheDirectory(game_cache, lock=False) as d:
            digest = d.digests()[0]
        os.unlink(game_cache / "entries" / digest)
        report = verify_cache(game_cache)
        assert any(d.kind == "missing-entry-file" for d in report.defects)

    def test_not_a_cache_dir(self, tmp_path):
        with pytest.raises(NotACacheDirectoryError):
            verify_cache(tmp_path)

    def test_verify_is_read_only(self, game_cache):
        snapshot = {
            p.name: p.read_bytes() for p in sorted((game_cache / "entries").iterdir())
        }
        snapshot["index"] = (game_cache / "index").read_bytes()
        verify_cache(game_cache)
        assert snapshot["index"] == (game_cache / "index").read_bytes()
        for p in sorted((game_cache / "entries").iterdir()):
            assert snapshot[p.name] == p.read_bytes()


class TestStats:
    def test_empty_cache_is_all_zero(self, tmp_path):
        with CacheDirectory(tmp_path / "c", lock=True, create=True):
            pass
        stats = cache_stats(tmp_path / "c")
        assert (stats.keys, stats.records, stats.prompt_tokens, stats.completion_tokens) == (
            0, 0, 0, 0,
        )

    def test_demo_cache_counts(self, game_cache):
        stats = cache_stats(game_cache)
        assert stats.keys == 4
        assert stats.records == 9
        assert stats.bytes > 0
        # Every stored record charges 1 completion token (all texts < 5 bytes).
        assert stats.completion_tokens == 9
        # 13-token prompts hold 4 + 2 records, 14-token prompts hold 2 + 1.
        assert stats.prompt_tokens == 6 * 13 + 3 * 14

    def test_slice_stats_never_exceed_source(self, game_cache, tmp_path):
        slice_cache(game_cache, tmp_path / "out", lambda k: "Bob" in k.prompt, max_per_key=1)
        src, dst = cache_stats(game_cache), cache_stats(tmp_path / "out")
        assert dst.keys <= src.keys
        assert dst.records <= src.records
        assert dst.prompt_tokens <= src.prompt_tokens
        assert dst.completion_tokens <= src.completion_tokens
        assert dst.bytes <= src.bytes


class TestLock:
    def test_second_owner_rejected(self, tmp_path):
        path = tmp_path / "c"
        with CacheDirectory(path, lock=True, create=True):
            with pytest.raises(LockHeldError):
                CacheDirectory(path, lock=True)

    def test_stale_lock_reclaimed(self, tmp_path):
        path = tmp_path / "c"
        with CacheDirectory(path, lock=True, create=True):
            pass
        # Fake a dead owner: a pid that cannot exist.
        (path / "LOCK").write_text(
            json.dumps({"pid": 2 ** 22 + 1, "proc_created": 1.0, "host": "gone"}),
            encoding="utf-8",
        )
        with CacheDirectory(path, lock=True) as d:
            assert d.digests() == []

    def test_unreadable_lock_requires_force(self, tmp_path):
        path = tmp_path / "c"
        with CacheDirectory(path, lock=True, create=True):
            pass
        (path / "LOCK").write_text("garbage", encoding="utf-8")
        with pytest.raises(LockHeldError):
            CacheDirectory(path, lock=True)
        with CacheDirectory(path, lock=True, force_unlock=True):
            pass

    def test_release_removes_lockfile(self, tmp_path):
        path = tmp_path / "c"
        d = CacheDirectory(path, lock=True, create=True)
        assert (path / "LOCK").exists()
        d.close()
        assert not (path / "LOCK").exists()

    def test_live_owner_not_stale(self):
        import psutil

        me = {"pid": os.getpid(), "proc_created": psutil.Process().create_time()}
        assert not DirectoryLock._is_stale(me)

    def test_recycled_pid_is_stale(self):
        # Same pid, wrong start time: the recorded owner is gone.
        assert DirectoryLock._is_stale({"pid": os.getpid(), "proc_created": -1.0})
