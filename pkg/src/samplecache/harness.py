"""Executable scenarios demonstrating the cache layers end to end.

Two scenarios ship with the package. The guessing game exercises the three
canonical layerings of a number-guessing prompt over a seeded on-disk cache.
The repair loop is a string-level mock of an iterative description-repair
pipeline: scoring a description draws a repeatable set of candidate programs
and tests for it, while repair candidates are drawn consumptively so every
attempt explores fresh material. Both scenarios log every pull into a
transcript whose serialization is deterministic, and aggregate usage the way
a cost report expects: pulls served from a cache are free.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .caching import CacheMode, InMemory, Independent, Persistent, Repeatable
from .model import Model, ResponseRecord
from .persistence import CacheDirectory
from .providers import (
    DEFAULT_PRICING,
    EPOCH_ISO,
    Pricing,
    ScriptedProvider,
    UsageReport,
    cost_of,
    estimate_tokens,
)

GAME_TEMPLATE = "Choose an integer from {interval} for {user} to guess."
DEFAULT_USERS = ("Alice", "Bob", "Alice")
DEFAULT_INTERVALS = ("[1, 1000]", "[1001, 2000]", "[1, 1000]")

# Demo cache content: per (user, interval), the stored response sequence.
GAME_CACHE_LISTING = (
    ("Alice", "[1, 1000]", ("2", "68", "109", "12")),
    ("Bob", "[1, 1000]", ("297", "573")),
    ("Alice", "[1001, 2000]", ("1393", "1002")),
    ("Bob", "[1001, 2000]", ("1740",)),
)

PROGRAM_PROMPT_PREFIX = "Write a Python program that satisfies this description:\n"
TEST_PROMPT_PREFIX = "Write one input/output example for this description:\n"
REPAIR_PROMPT_PREFIX = "Rewrite this task description to remove ambiguity:\n"

DEFAULT_PROBLEMS = (
    ("p1", "Return the sum of a list of integers."),
    ("p2", "Reverse the words of a sentence."),
    ("p3", "Find the largest prime factor of a number."),
)


def program_prompt(description: str) -> str:
    return PROGRAM_PROMPT_PREFIX + description


def test_prompt(description: str) -> str:
    return TEST_PROMPT_PREFIX + description


def repair_prompt(description: str) -> str:
    return REPAIR_PROMPT_PREFIX + description


@dataclass(frozen=True)
class TranscriptEvent:
    """One pull: which prompt, which layer served it, at what cost."""

    step: int
    prompt: str
    layer: str
    outcome: str
    text: str
    prompt_tokens: int
    completion_tokens: int
    api_time_ms: int
    tags: dict = field(default_factory=dict)


@dataclass
class RunTranscript:
    """Ordered event log of a scenario run; fully determines its outputs."""

    scenario: str
    config: dict
    events: list[TranscriptEvent]
    outputs: list[str]
    usage: UsageReport


def usage_report(transcript: RunTranscript, pricing: Pricing = DEFAULT_PRICING) -> UsageReport:
    """Aggregate a transcript's events. Cache hits contribute zero everywhere."""
    prompt_tokens = sum(e.prompt_tokens for e in transcript.events)
    completion_tokens = sum(e.completion_tokens for e in transcript.events)
    api_time_ms = sum(e.api_time_ms for e in transcript.events)
    partial = UsageReport(prompt_tokens, completion_tokens, api_time_ms)
    return replace(partial, cost=cost_of(partial, pricing))


def serialize_transcript(transcript: RunTranscript) -> str:
    """Line-oriented form; equal transcripts serialize to equal bytes."""

    def dump(obj: dict) -> str:
        return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    lines = [dump({"event": "run", "scenario": transcript.scenario, **transcript.config})]
    for e in transcript.events:
        lines.append(
            dump(
                {
                    "event": "pull",
                    "step": e.step,
                    "prompt": e.prompt,
                    "layer": e.layer,
                    "outcome": e.outcome,
                    "text": e.text,
                    "prompt_tokens": e.prompt_tokens,
                    "completion_tokens": e.completion_tokens,
                    "api_time_ms": e.api_time_ms,
                    "tags": e.tags,
                }
            )
        )
    lines.append(dump({"event": "outputs", "texts": transcript.outputs}))
    lines.append(dump({"event": "usage", **transcript.usage.as_dict()}))
    return "\n".join(lines) + "\n"


class GameLayering(Enum):
    """How the guessing game wires its model stack."""

    PERSISTENT_ONLY = "persistent-only"
    INDEPENDENT_OVER_PERSISTENT = "independent-over-persistent"
    SCOPED_IN_MEMORY = "scoped-in-memory"


@dataclass
class GuessingGameConfig:
    users: Sequence[str] = DEFAULT_USERS
    intervals: Sequence[str] = DEFAULT_INTERVALS
    layering: GameLayering = GameLayering.PERSISTENT_ONLY
    cache_dir: str | Path = "game-cache"
    mode: CacheMode = CacheMode.REPLAY_STRICT
    seed: int = 0
    pricing: Pricing = DEFAULT_PRICING
    deterministic_clock: bool = False
    force_unlock: bool = False

    def __post_init__(self) -> None:
        if not self.users or not self.intervals:
            raise ValueError("users and intervals must be non-empty")


@dataclass
class GameRun:
    responses: list[str]
    transcript: RunTranscript


def seed_game_cache(cache_dir: str | Path, provider: ScriptedProvider | None = None) -> None:
    """Write the demo guessing-game cache into ``cache_dir``.

    Records carry the synthetic usage the scripted provider would have
    charged when generating them, and a fixed epoch timestamp so the seeded
    directory is byte-stable.
    """
    provider = provider if provider is not None else ScriptedProvider()
    with CacheDirectory(cache_dir, lock=True, create=True) as directory:
        for user, interval, texts in GAME_CACHE_LISTING:
            prompt = GAME_TEMPLATE.format(user=user, interval=interval)
            key = provider.key_for(prompt)
            for text in texts:
                directory.append_response(
                    key,
                    ResponseRecord(
                        text=text,
                        prompt_tokens=estimate_tokens(prompt),
                        completion_tokens=estimate_tokens(text),
                        api_time_ms=provider.api_time_ms,
                        provider_id=provider.provider_id,
                        created_at=EPOCH_ISO,
                    ),
                )


class _PullLog:
    """Collects transcript events, attributing each pull to the layer that
    served it via hit/fill counter deltas on the repeatable layers."""

    def __init__(self, persistent: Repeatable) -> None:
        self.persistent = persistent
        self.events: list[TranscriptEvent] = []

    def pull(self, model: Model, prompt: str, tags: dict, memory: Repeatable | None = None) -> ResponseRecord:
        return self.pull_from(model.sample(prompt), tags, memory=memory)

    def pull_from(self, cursor, tags: dict, memory: Repeatable | None = None) -> ResponseRecord:
        memory_hits = memory.hits if memory is not None else 0
        persistent_hits = self.persistent.hits
        record = next(cursor)
        if memory is not None and memory.hits > memory_hits:
            layer, outcome = "memory", "hit"
        elif self.persistent.hits > persistent_hits:
            layer, outcome = "persistent", "hit"
        else:
            layer, outcome = "provider", "fill"
        self.events.append(
            TranscriptEvent(
                step=len(self.events),
                prompt=cursor.key.prompt,
                layer=layer,
                outcome=outcome,
                text=record.text,
                prompt_tokens=record.prompt_tokens,
                completion_tokens=record.completion_tokens,
                api_time_ms=record.api_time_ms,
                tags=tags,
            )
        )
        return record


def run_guessing_game(cfg: GuessingGameConfig, provider: Model | None = None) -> GameRun:
    """Run the nested user/interval loops with the configured layering."""
    if provider is None:
        provider = ScriptedProvider(seed=cfg.seed, deterministic_clock=cfg.deterministic_clock)
    responses: list[str] = []
    with Persistent(
        provider, cfg.cache_dir, mode=cfg.mode, force_unlock=cfg.force_unlock
    ) as persistent:
        log = _PullLog(persistent)
        base: Model = persistent
        if cfg.layering is not GameLayering.PERSISTENT_ONLY:
            base = Independent(persistent)
        for round_no, user in enumerate(cfg.users):
            memory = InMemory(base) if cfg.layering is GameLayering.SCOPED_IN_MEMORY else None
            model = memory if memory is not None else base
            for interval in cfg.intervals:
                prompt = GAME_TEMPLATE.format(user=user, interval=interval)
                tags = {"user": user, "interval": interval, "round": round_no}
                record = log.pull(model, prompt, tags, memory=memory)
                responses.append(record.text)
    config = {
        "users": list(cfg.users),
        "intervals": list(cfg.intervals),
        "layering": cfg.layering.value,
        "cache_dir": str(cfg.cache_dir),
        "mode": cfg.mode.value,
        "seed": cfg.seed,
    }
    transcript = RunTranscript("guessing-game", config, log.events, list(responses), UsageReport())
    transcript.usage = usage_report(transcript, cfg.pricing)
    return GameRun(responses=responses, transcript=transcript)


@dataclass
class RepairLoopConfig:
    problems: Sequence[tuple[str, str]] = DEFAULT_PROBLEMS
    programs_per_score: int = 20
    tests_per_score: int = 10
    max_attempts: int = 3
    threshold: float = 0.5
    mode: CacheMode = CacheMode.READ_WRITE
    cache_dir: str | Path = "repair-cache"
    seed: int = 0
    pricing: Pricing = DEFAULT_PRICING
    deterministic_clock: bool = False
    force_unlock: bool = False

    def __post_init__(self) -> None:
        if self.programs_per_score < 1 or self.tests_per_score < 1:
            raise ValueError("programs_per_score and tests_per_score must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must be in [0, 1]")


@dataclass
class ProblemResult:
    problem_id: str
    final_description: str
    final_score: float
    attempts: int
    reached_threshold: bool


@dataclass
class RepairRun:
    results: list[ProblemResult]
    scored_descriptions: list[str]
    transcript: RunTranscript


def cluster_by_text(texts: Sequence[str]) -> list[tuple[str, int]]:
    """Group equal texts; largest first, ties broken by first appearance."""
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for i, text in enumerate(texts):
        counts[text] = counts.get(text, 0) + 1
        first_seen.setdefault(text, i)
    return sorted(counts.items(), key=lambda item: (-item[1], first_seen[item[0]]))


def example_consistency(program_text: str, test_text: str) -> int:
    """Mock pass/fail of a program against an example: a stable 0/1 bit."""
    digest = hashlib.sha256(
        program_text.encode("utf-8") + b"\x1f" + test_text.encode("utf-8")
    ).digest()
    return digest[-1] & 1


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that at least one of k draws (from n with c correct) is correct.

    Computed as 1 - C(n-c, k) / C(n, k) with exact integer arithmetic, so it
    stays well-defined for n up to at least 10,000.
    """
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


def run_repair_loop(cfg: RepairLoopConfig, provider: Model | None = None) -> RepairRun:
    """Iteratively repair each problem description, at most ``max_attempts`` times.

    Scoring a description is repeatable (same programs and tests every time,
    courtesy of the persistent layer), while repair candidates come through
    an independent reference so a failed attempt is never simply retried with
    the same draw. A candidate replaces the current description only when its
    score is strictly better; the loop stops early once the current score
    reaches the threshold.
    """
    if provider is None:
        provider = ScriptedProvider(seed=cfg.seed, deterministic_clock=cfg.deterministic_clock)
    results: list[ProblemResult] = []
    scored: dict[str, None] = {}
    with Persistent(
        provider, cfg.cache_dir, mode=cfg.mode, force_unlock=cfg.force_unlock
    ) as persistent:
        independent = Independent(persistent)
        log = _PullLog(persistent)

        def score(description: str, problem_id: str) -> float:
            # One cursor per prompt, many elements: the repeatable layer makes
            # every re-score of the same description read the same positions.
            scored.setdefault(description)
            program_cursor = persistent.sample(program_prompt(description))
            program_tags = {"problem": problem_id, "purpose": "program"}
            programs = [
                log.pull_from(program_cursor, program_tags).text
                for _ in range(cfg.programs_per_score)
            ]
            test_cursor = persistent.sample(test_prompt(description))
            test_tags = {"problem": problem_id, "purpose": "test"}
            tests = [
                log.pull_from(test_cursor, test_tags).text
                for _ in range(cfg.tests_per_score)
            ]
            top_text, top_count = cluster_by_text(programs)[0]
            consistency = example_consistency(top_text, tests[0])
            return 0.5 * (top_count / cfg.programs_per_score) + 0.5 * consistency

        for problem_id, description in cfg.problems:
            current = description
            attempts = 0
            reached = False
            last_score = 0.0
            for _ in range(cfg.max_attempts):
                attempts += 1
                candidate = log.pull(
                    independent,
                    repair_prompt(current),
                    {"problem": problem_id, "purpose": "repair"},
                ).text
                if score(candidate, problem_id) > score(current, problem_id):
                    current = candidate
                last_score = score(current, problem_id)
                if last_score >= cfg.threshold:
                    reached = True
                    break
            results.append(
                ProblemResult(
                    problem_id=problem_id,
                    final_description=current,
                    final_score=last_score,
                    attempts=attempts,
                    reached_threshold=reached,
                )
            )
    config = {
        "problems": [list(p) for p in cfg.problems],
        "programs_per_score": cfg.programs_per_score,
        "tests_per_score": cfg.tests_per_score,
        "max_attempts": cfg.max_attempts,
        "threshold": cfg.threshold,
        "mode": cfg.mode.value,
        "cache_dir": str(cfg.cache_dir),
        "seed": cfg.seed,
    }
    outputs = [r.final_description for r in results]
    transcript = RunTranscript("repair-loop", config, log.events, outputs, UsageReport())
    transcript.usage = usage_report(transcript, cfg.pricing)
    return RepairRun(results=results, scored_descriptions=list(scored), transcript=transcript)
