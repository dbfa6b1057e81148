"""Command-line front door: cache inspection, verification, slicing, stats,
and scenario execution.

Exit codes: 0 on success, 1 for domain errors (replay miss, held lock,
verification defects, bad paths), 2 for usage errors. Every subcommand emits
a single JSON document under ``--json``; otherwise output is a small
human-readable table. Inspection subcommands (inspect, verify, stats) never
lock or mutate the cache directory. No real provider is contacted unless
``--provider http`` is given together with an explicit base URL; the default
provider is the deterministic scripted one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from decimal import Decimal
from pathlib import Path

from .caching import CacheMode
from .errors import SampleCacheError
from .harness import (
    DEFAULT_INTERVALS,
    DEFAULT_PROBLEMS,
    DEFAULT_USERS,
    GameLayering,
    GuessingGameConfig,
    RepairLoopConfig,
    RunTranscript,
    run_guessing_game,
    run_repair_loop,
    seed_game_cache,
    serialize_transcript,
)
from .model import SamplingParams
from .persistence import CacheDirectory, cache_stats, slice_cache, verify_cache
from .providers import (
    DEFAULT_PRICING,
    HttpProvider,
    HttpProviderConfig,
    Pricing,
    ScriptedProvider,
    UsageReport,
)


def _print_json(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2))


def _usage_table(usage: UsageReport) -> str:
    header = (
        f"{'prompt tokens':>15}  {'completion tokens':>18}  {'total tokens':>13}  "
        f"{'api time (s)':>13}  {'total cost ($)':>15}"
    )
    row = (
        f"{usage.prompt_tokens:>15}  {usage.completion_tokens:>18}  {usage.total_tokens:>13}  "
        f"{usage.api_time_ms / 1000.0:>13.1f}  {usage.as_dict()['cost']:>15}"
    )
    return header + "\n" + row


def _pricing_from(args: argparse.Namespace) -> Pricing:
    return Pricing(Decimal(args.price_prompt), Decimal(args.price_completion))


def _provider_from(args: argparse.Namespace):
    if args.provider == "scripted":
        return ScriptedProvider(
            seed=args.seed, deterministic_clock=args.deterministic_clock
        )
    if not args.base_url:
        raise SampleCacheError("--provider http requires an explicit --base-url")
    api_key = os.environ.get(args.api_key_env, "")
    if not api_key:
        raise SampleCacheError(f"environment variable {args.api_key_env} is empty or unset")
    config = HttpProviderConfig(
        base_url=args.base_url,
        api_key=api_key,
        model_id=args.model,
        pricing=_pricing_from(args),
    )
    return HttpProvider(config, SamplingParams(model_id=args.model))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise SampleCacheError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise SampleCacheError(f"config file {path} must hold a JSON object")
    return data


def _write_transcript(path: str | None, transcript: RunTranscript) -> None:
    if path:
        Path(path).write_text(serialize_transcript(transcript), encoding="utf-8", newline="")


def _add_provider_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", choices=["scripted", "http"], default="scripted")
    parser.add_argument("--base-url", default="", help="chat-completions endpoint base URL")
    parser.add_argument("--model", default="default-model", help="model id for the http provider")
    parser.add_argument(
        "--api-key-env",
        default="SAMPLECACHE_API_KEY",
        help="environment variable holding the API key",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--deterministic-clock", action="store_true")
    parser.add_argument("--price-prompt", default=str(DEFAULT_PRICING.prompt_per_million))
    parser.add_argument("--price-completion", default=str(DEFAULT_PRICING.completion_per_million))
    parser.add_argument("--transcript", default=None, help="write the run transcript to this file")
    parser.add_argument("--force-unlock", action="store_true")


def cmd_inspect(args: argparse.Namespace) -> int:
    listing = []
    with CacheDirectory(args.cache, lock=False) as directory:
        for key in directory.keys():
            if args.select and args.select not in key.prompt:
                continue
            records = directory.load_entry(key)
            listing.append(
                {
                    "digest": key.digest,
                    "prompt": key.prompt,
                    "records": len(records),
                    "first_texts": [r.text for r in records[: args.first]],
                }
            )
    if args.json:
        _print_json({"cache": str(args.cache), "keys": listing})
        return 0
    if not listing:
        print("no keys")
        return 0
    for item in listing:
        texts = ", ".join(repr(t) for t in item["first_texts"])
        print(f"{item['digest'][:12]}  {item['records']:>4}  {item['prompt']!r}")
        print(f"{'':12}  first: {texts}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    report = verify_cache(args.cache)
    if args.json:
        _print_json(
            {
                "ok": report.ok,
                "defects": [
                    {"kind": d.kind, "subject": d.subject, "detail": d.detail}
                    for d in report.defects
                ],
            }
        )
    elif report.ok:
        print("ok")
    else:
        for d in report.defects:
            print(f"defect: {d.kind} [{d.subject}] {d.detail}")
    return 0 if report.ok else 1


def cmd_stats(args: argparse.Namespace) -> int:
    stats = cache_stats(args.cache)
    payload = {
        "keys": stats.keys,
        "records": stats.records,
        "prompt_tokens": stats.prompt_tokens,
        "completion_tokens": stats.completion_tokens,
        "bytes": stats.bytes,
    }
    if args.json:
        _print_json(payload)
    else:
        for name, value in payload.items():
            print(f"{name:>18}: {value}")
    return 0


def cmd_slice(args: argparse.Namespace) -> int:
    selector = (lambda key: args.select in key.prompt) if args.select else (lambda key: True)
    report = slice_cache(
        args.src,
        args.dst,
        selector,
        max_per_key=args.max_per_key,
        force_unlock=args.force_unlock,
    )
    if args.json:
        _print_json(
            {
                "keys_copied": report.keys_copied,
                "records_copied": report.records_copied,
                "dst": str(args.dst),
            }
        )
    else:
        print(f"{report.keys_copied} keys, {report.records_copied} records -> {args.dst}")
    return 0


def cmd_seed_demo(args: argparse.Namespace) -> int:
    seed_game_cache(args.cache)
    if args.json:
        _print_json({"cache": str(args.cache), "seeded": True})
    else:
        print(f"seeded demo cache at {args.cache}")
    return 0


def cmd_game(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    users = args.users.split(",") if args.users else file_cfg.get("users", list(DEFAULT_USERS))
    intervals = (
        args.intervals.split(";") if args.intervals else file_cfg.get("intervals", list(DEFAULT_INTERVALS))
    )
    layering = GameLayering(args.layering or file_cfg.get("layering", "persistent-only"))
    mode = CacheMode(args.mode or file_cfg.get("mode", "replay-strict"))
    cfg = GuessingGameConfig(
        users=users,
        intervals=intervals,
        layering=layering,
        cache_dir=args.cache,
        mode=mode,
        seed=args.seed,
        pricing=_pricing_from(args),
        deterministic_clock=args.deterministic_clock,
        force_unlock=args.force_unlock,
    )
    run = run_guessing_game(cfg, provider=_provider_from(args))
    _write_transcript(args.transcript, run.transcript)
    if args.json:
        _print_json(
            {
                "responses": run.responses,
                "layering": layering.value,
                "mode": mode.value,
                "usage": run.transcript.usage.as_dict(),
            }
        )
        return 0
    for text in run.responses:
        print(text)
    print()
    print(_usage_table(run.transcript.usage))
    return 0


def cmd_repair(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    problems = [tuple(p) for p in file_cfg.get("problems", [list(p) for p in DEFAULT_PROBLEMS])]
    mode = CacheMode(args.mode or file_cfg.get("mode", "read-write"))
    cfg = RepairLoopConfig(
        problems=problems,
        programs_per_score=args.programs_per_score,
        tests_per_score=args.tests_per_score,
        max_attempts=args.max_attempts,
        threshold=args.threshold,
        mode=mode,
        cache_dir=args.cache,
        seed=args.seed,
        pricing=_pricing_from(args),
        deterministic_clock=args.deterministic_clock,
        force_unlock=args.force_unlock,
    )
    run = run_repair_loop(cfg, provider=_provider_from(args))
    _write_transcript(args.transcript, run.transcript)
    if args.json:
        _print_json(
            {
                "problems": [
                    {
                        "id": r.problem_id,
                        "final_description": r.final_description,
                        "final_score": r.final_score,
                        "attempts": r.attempts,
                        "reached_threshold": r.reached_threshold,
                    }
                    for r in run.results
                ],
                "scored_descriptions": len(run.scored_descriptions),
                "mode": mode.value,
                "usage": run.transcript.usage.as_dict(),
            }
        )
        return 0
    for r in run.results:
        status = "ok" if r.reached_threshold else "exhausted"
        print(f"[{r.problem_id}] {status} after {r.attempts} attempt(s), score {r.final_score:.3f}")
        print(f"    {r.final_description}")
    print()
    print(_usage_table(run.transcript.usage))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="samplecache",
        description="Inspect, verify, slice, and replay response caches; run demo scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="list keys, record counts, and leading texts")
    p.add_argument("--cache", required=True)
    p.add_argument("--select", default="", help="only keys whose prompt contains this substring")
    p.add_argument("--first", type=int, default=3, help="how many leading texts to show")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("verify", help="check index/entry agreement; exit 0 iff clean")
    p.add_argument("--cache", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stats", help="aggregate counts, tokens, and bytes")
    p.add_argument("--cache", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("slice", help="copy a subset of a cache into a new directory")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--select", default="", help="only keys whose prompt contains this substring")
    p.add_argument("--max-per-key", type=int, default=None)
    p.add_argument("--force-unlock", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("seed-demo", help="write the demo guessing-game cache")
    p.add_argument("--cache", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_seed_demo)

    p = sub.add_parser("game", help="run the guessing-game scenario")
    p.add_argument("--cache", required=True)
    p.add_argument("--layering", choices=[l.value for l in GameLayering], default=None)
    p.add_argument("--mode", choices=[m.value for m in CacheMode], default=None)
    p.add_argument("--users", default="", help="comma-separated user names")
    p.add_argument("--intervals", default="", help="semicolon-separated intervals")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--json", action="store_true")
    _add_provider_args(p)
    p.set_defaults(func=cmd_game)

    p = sub.add_parser("repair", help="run the description-repair scenario")
    p.add_argument("--cache", required=True)
    p.add_argument("--mode", choices=[m.value for m in CacheMode], default=None)
    p.add_argument("--programs-per-score", type=int, default=20)
    p.add_argument("--tests-per-score", type=int, default=10)
    p.add_argument("--max-attempts", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--json", action="store_true")
    _add_provider_args(p)
    p.set_defaults(func=cmd_repair)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SampleCacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
