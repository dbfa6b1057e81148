"""Scenario harness: guessing game, repair loop, transcripts, usage."""

import math
from decimal import Decimal
from itertools import combinations

import pytest

from samplecache import CacheMode, ReplayMissError, ScriptedProvider
from samplecache.harness import (
    DEFAULT_PROBLEMS,
    GameLayering,
    GuessingGameConfig,
    RepairLoopConfig,
    cluster_by_text,
    pass_at_k,
    run_guessing_game,
    run_repair_loop,
    seed_game_cache,
    serialize_transcript,
    usage_report,
)

from conftest import FIXTURE_DIR


def test_shipped_fixture_matches_seeder(tmp_path):
    seed_game_cache(tmp_path / "fresh")
    fresh = {p.name: p.read_bytes() for p in (tmp_path / "fresh" / "entries").iterdir()}
    fresh["index"] = (tmp_path / "fresh" / "index").read_bytes()
    shipped = {p.name: p.read_bytes() for p in (FIXTURE_DIR / "entries").iterdir()}
    shipped["index"] = (FIXTURE_DIR / "index").read_bytes()
    assert fresh == shipped


def test_game_records_misses_when_cache_is_writable(tmp_path):
    provider = ScriptedProvider(seed=4)
    cfg = GuessingGameConfig(
        cache_dir=tmp_path / "cache", mode=CacheMode.READ_WRITE, layering=GameLayering.PERSISTENT_ONLY
    )
    run = run_guessing_game(cfg, provider=provider)
    assert len(run.responses) == 9
    # 4 distinct prompts, each pulled at position 0 only.
    assert provider.total_calls == 4
    replay = run_guessing_game(
        GuessingGameConfig(cache_dir=tmp_path / "cache", mode=CacheMode.REPLAY_STRICT),
        provider=ScriptedProvider(seed=4),
    )
    assert replay.responses == run.responses


def test_game_replay_demand_beyond_store_raises(game_cache):
    cfg = GuessingGameConfig(
        users=["Alice"] * 5,
        intervals=["[1, 1000]"],
        layering=GameLayering.INDEPENDENT_OVER_PERSISTENT,
        cache_dir=game_cache,
        mode=CacheMode.REPLAY_STRICT,
    )
    with pytest.raises(ReplayMissError) as excinfo:
        run_guessing_game(cfg, provider=ScriptedProvider())
    assert excinfo.value.position == 4
    assert excinfo.value.stored_length == 4


def test_game_transcript_layers(game_cache):
    cfg = GuessingGameConfig(layering=GameLayering.SCOPED_IN_MEMORY, cache_dir=game_cache)
    run = run_guessing_game(cfg, provider=ScriptedProvider())
    layers = [e.layer for e in run.transcript.events]
    # Third round of each user repeats the first interval from the scope cache.
    assert layers == ["persistent", "persistent", "memory"] * 3
    assert all(e.outcome == "hit" for e in run.transcript.events)


def test_config_validation():
    with pytest.raises(ValueError):
        GuessingGameConfig(users=[])
    with pytest.raises(ValueError):
        RepairLoopConfig(programs_per_score=0)
    with pytest.raises(ValueError):
        RepairLoopConfig(threshold=1.5)
    with pytest.raises(ValueError):
        RepairLoopConfig(max_attempts=0)


class TestRepairLoop:
    def test_repair_candidates_consume_fresh_positions(self, tmp_path):
        provider = ScriptedProvider(seed=1)
        cfg = RepairLoopConfig(
            problems=DEFAULT_PROBLEMS,
            cache_dir=tmp_path / "cache",
            seed=1,
            deterministic_clock=True,
        )
        run = run_repair_loop(cfg, provider=provider)
        repair_events = [e for e in run.transcript.events if e.tags.get("purpose") == "repair"]
        by_prompt = {}
        for e in repair_events:
            by_prompt.setdefault(e.prompt, []).append(e.text)
        for texts in by_prompt.values():
            assert len(set(texts)) == len(texts)

    def test_rescoring_is_position_identical(self, tmp_path):
        cfg = RepairLoopConfig(
            problems=[("p1", "one problem")],
            programs_per_score=4,
            tests_per_score=2,
            max_attempts=2,
            threshold=1.0,  # unreachable with distinct texts: both attempts run
            cache_dir=tmp_path / "cache",
            seed=0,
        )
        run = run_repair_loop(cfg, provider=ScriptedProvider(seed=0))
        program_events = [
            e for e in run.transcript.events if e.tags.get("purpose") == "program"
        ]
        by_prompt = {}
        for e in program_events:
            by_prompt.setdefault(e.prompt, []).append(e.text)
        for texts in by_prompt.values():
            # Every rescore of a description replays the same opening texts.
            chunk = cfg.programs_per_score
            chunks = [texts[i : i + chunk] for i in range(0, len(texts), chunk)]
            assert all(c == chunks[0] for c in chunks)

    def test_acceptance_requires_strict_improvement(self, tmp_path):
        cfg = RepairLoopConfig(
            problems=DEFAULT_PROBLEMS,
            cache_dir=tmp_path / "cache",
            seed=1,
            deterministic_clock=True,
        )
        run = run_repair_loop(cfg, provider=ScriptedProvider(seed=1, deterministic_clock=True))
        assert all(r.attempts <= cfg.max_attempts for r in run.results)
        assert any(r.reached_threshold for r in run.results)
        for r in run.results:
            assert r.final_description in run.scored_descriptions

    def test_no_cache_costs_at_least_first_cached(self, tmp_path):
        base = dict(problems=DEFAULT_PROBLEMS, seed=1, deterministic_clock=True)
        no_cache = run_repair_loop(
            RepairLoopConfig(mode=CacheMode.OFF, cache_dir=tmp_path / "off", **base),
            provider=ScriptedProvider(seed=1, deterministic_clock=True),
        )
        recorded = run_repair_loop(
            RepairLoopConfig(mode=CacheMode.READ_WRITE, cache_dir=tmp_path / "rw", **base),
            provider=ScriptedProvider(seed=1, deterministic_clock=True),
        )
        first_cached = run_repair_loop(
            RepairLoopConfig(mode=CacheMode.READ_WRITE, cache_dir=tmp_path / "rw", **base),
            provider=ScriptedProvider(seed=1, deterministic_clock=True),
        )
        for field in ("prompt_tokens", "completion_tokens", "api_time_ms", "cost"):
            assert getattr(no_cache.transcript.usage, field) >= getattr(
                first_cached.transcript.usage, field
            )
        assert first_cached.transcript.usage.total_tokens == 0
        assert recorded.transcript.usage.total_tokens > 0


class TestUsage:
    def test_all_hit_replay_reports_zero(self, game_cache):
        run = run_guessing_game(
            GuessingGameConfig(cache_dir=game_cache), provider=ScriptedProvider()
        )
        usage = run.transcript.usage
        assert (usage.prompt_tokens, usage.completion_tokens, usage.total_tokens) == (0, 0, 0)
        assert usage.api_time_ms == 0
        assert usage.cost == Decimal("0.00")

    def test_usage_report_recomputes_from_events(self, tmp_path):
        run = run_repair_loop(
            RepairLoopConfig(
                problems=[("p1", "d")],
                programs_per_score=2,
                tests_per_score=1,
                max_attempts=1,
                cache_dir=tmp_path / "cache",
            ),
            provider=ScriptedProvider(),
        )
        usage = usage_report(run.transcript)
        assert usage == run.transcript.usage
        assert usage.total_tokens == usage.prompt_tokens + usage.completion_tokens


def test_serialize_transcript_round_trip_shape(game_cache):
    run = run_guessing_game(GuessingGameConfig(cache_dir=game_cache), provider=ScriptedProvider())
    text = serialize_transcript(run.transcript)
    lines = text.strip().split("\n")
    assert len(lines) == 1 + 9 + 1 + 1  # run header, 9 pulls, outputs, usage
    assert text.endswith("\n")


def test_cluster_by_text_ordering():
    clusters = cluster_by_text(["b", "a", "b", "c", "a", "b"])
    assert clusters[0] == ("b", 3)
    assert clusters[1] == ("a", 2)
    assert clusters[2] == ("c", 1)
    # Ties break on first appearance.
    assert cluster_by_text(["y", "x"]) == [("y", 1), ("x", 1)]


class TestPassAtK:
    def test_all_correct(self):
        for k in range(1, 11):
            assert pass_at_k(10, 10, k) == 1.0

    def test_none_correct(self):
        for k in range(1, 11):
            assert pass_at_k(10, 0, k) == 0.0

    def test_enumeration_example(self):
        # Of the C(5,3)=10 subsets, 9 contain at least one of the 2 correct.
        assert math.isclose(pass_at_k(5, 2, 3), 0.9, abs_tol=1e-15)

    def test_large_n_does_not_overflow(self):
        value = pass_at_k(10_000, 17, 100)
        assert 0.0 < value < 1.0

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            pass_at_k(5, 6, 1)
        with pytest.raises(ValueError):
            pass_at_k(5, 2, 0)
        with pytest.raises(ValueError):
            pass_at_k(5, 2, 6)
        with pytest.raises(ValueError):
            pass_at_k(5, -1, 1)

    def test_matches_brute_force_spot(self):
        n, c, k = 8, 3, 2
        wins = sum(
            1 for subset in combinations(range(n), k) if any(i < c for i in subset)
        )
        assert math.isclose(pass_at_k(n, c, k), wins / math.comb(n, k), abs_tol=1e-15)
