"""Uncached model access and usage accounting.

Two providers implement the model interface directly. ``ScriptedProvider``
is a deterministic stand-in for tests and scenarios: the text at (key,
position) is a pure function of its script and seed, so recorded runs are
reproducible bit for bit. ``HttpProvider`` is a chat-completions client for
real endpoints, with retry/backoff and provider-reported usage.

Cost is configuration, not code: prices change, so they arrive through
:class:`Pricing` and only the arithmetic lives here.
"""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Mapping

import requests

from .errors import (
    AuthFailureError,
    MalformedResponseError,
    ProviderError,
    ProviderUnavailableError,
    RateLimitedError,
)
from .keys import QueryKey, canonical_key
from .model import Model, Prompt, ResponseRecord, SampleCursor, SamplingParams

EPOCH_ISO = "1970-01-01T00:00:00+00:00"


def estimate_tokens(text: str) -> int:
    """Synthetic token count: one token per 4 UTF-8 bytes, rounded up."""
    return (len(text.encode("utf-8")) + 3) // 4


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class _ScriptEntry:
    """Scripted texts for one prompt; generators are materialized on demand."""

    def __init__(self, items: Iterable[str]) -> None:
        if isinstance(items, (list, tuple)):
            self._texts = [str(t) for t in items]
            self._pending = None
        else:
            self._texts: list[str] = []
            self._pending = iter(items)

    def text_at(self, position: int) -> str | None:
        while self._pending is not None and len(self._texts) <= position:
            try:
                self._texts.append(str(next(self._pending)))
            except StopIteration:
                self._pending = None
        if position < len(self._texts):
            return self._texts[position]
        return None


class _ScriptedSequence:
    __slots__ = ("_provider", "_key")

    def __init__(self, provider: ScriptedProvider, key: QueryKey) -> None:
        self._provider = provider
        self._key = key

    def fetch(self, position: int) -> ResponseRecord:
        return self._provider._serve(self._key, position)


class ScriptedProvider(Model):
    """Deterministic provider: scripted texts first, seeded texts after.

    Prompts present in ``script`` yield their listed texts in order and then
    fall through to seeded generation; unscripted prompts are seeded from the
    start. The seeded text at (key, position) depends only on the seed, so
    two providers with equal configuration serve identical sequences.
    ``call_counter`` tracks pulls served per key, which is how tests observe
    that cache layers really absorbed the traffic.
    """

    def __init__(
        self,
        script: Mapping[str, Iterable[str]] | None = None,
        *,
        seed: int = 0,
        provider_id: str = "scripted",
        params: SamplingParams | None = None,
        api_time_ms: int = 5,
        deterministic_clock: bool = False,
    ) -> None:
        self.script = {prompt: _ScriptEntry(texts) for prompt, texts in (script or {}).items()}
        self.seed = int(seed)
        self.provider_id = provider_id
        self.params = params if params is not None else SamplingParams(model_id="scripted")
        self.api_time_ms = api_time_ms
        self.deterministic_clock = deterministic_clock
        self.call_counter: dict[QueryKey, int] = {}

    def key_for(self, prompt: Prompt) -> QueryKey:
        return canonical_key(self.provider_id, self.params, prompt)

    def sample(self, prompt: Prompt) -> SampleCursor:
        return self.sample_key(self.key_for(prompt))

    def sample_key(self, key: QueryKey) -> SampleCursor:
        return SampleCursor(key, _ScriptedSequence(self, key))

    @property
    def total_calls(self) -> int:
        return sum(self.call_counter.values())

    def text_at(self, key: QueryKey, position: int) -> str:
        """The text this provider serves at (key, position); no counter effect."""
        entry = self.script.get(key.prompt)
        if entry is not None:
            text = entry.text_at(position)
            if text is not None:
                return text
        seed_input = f"{self.seed}:{key.digest}:{position}".encode("utf-8")
        return str(int(hashlib.sha256(seed_input).hexdigest()[:12], 16))

    def _serve(self, key: QueryKey, position: int) -> ResponseRecord:
        text = self.text_at(key, position)
        self.call_counter[key] = self.call_counter.get(key, 0) + 1
        return ResponseRecord(
            text=text,
            prompt_tokens=estimate_tokens(key.prompt),
            completion_tokens=estimate_tokens(text),
            api_time_ms=self.api_time_ms,
            provider_id=self.provider_id,
            created_at=EPOCH_ISO if self.deterministic_clock else _now_iso(),
        )


@dataclass(frozen=True)
class Pricing:
    """Per-million-token prices in currency units."""

    prompt_per_million: Decimal
    completion_per_million: Decimal

    def __post_init__(self) -> None:
        for name in ("prompt_per_million", "completion_per_million"):
            value = Decimal(str(getattr(self, name)))
            if value < 0:
                raise ValueError(f"{name} must be >= 0")
            object.__setattr__(self, name, value)


DEFAULT_PRICING = Pricing(Decimal("0.40"), Decimal("1.60"))


@dataclass(frozen=True)
class UsageReport:
    """Aggregated usage for a run. Cache hits contribute zero to every field."""

    prompt_tokens: int = 0
    completion_tokens: int = 0
    api_time_ms: int = 0
    cost: Decimal = Decimal("0")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def as_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "api_time_ms": self.api_time_ms,
            "cost": format_cost(self.cost),
        }


def cost_of(usage: UsageReport, pricing: Pricing) -> Decimal:
    """Exact decimal cost of a usage report under ``pricing``."""
    return (
        usage.prompt_tokens * pricing.prompt_per_million
        + usage.completion_tokens * pricing.completion_per_million
    ) / Decimal(1_000_000)


def format_cost(cost: Decimal) -> str:
    """Display form: two decimals, banker's rounding."""
    return str(cost.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


@dataclass(frozen=True)
class HttpProviderConfig:
    """Connection, retry, and pricing settings for a chat-completions endpoint.

    The API key is sourced from the environment by the CLI and passed in
    here; it is never persisted anywhere.
    """

    base_url: str
    api_key: str
    model_id: str
    timeout_ms: int = 30_000
    max_retries: int = 3
    backoff_initial_ms: int = 200
    backoff_multiplier: float = 2.0
    backoff_jitter: float = 0.1
    batch_limit: int = 8
    pricing: Pricing = DEFAULT_PRICING

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be >= 1")


class _HttpSequence:
    __slots__ = ("_provider", "_key")

    def __init__(self, provider: HttpProvider, key: QueryKey) -> None:
        self._provider = provider
        self._key = key

    def fetch(self, position: int) -> ResponseRecord:
        # Position is not sent anywhere: every pull is a fresh completion
        # request, and sample independence is the provider's responsibility.
        return self._provider._complete(self._key, 1)[0]


class HttpProvider(Model):
    """Chat-completions client.

    Each pull issues one request with the key's parameters and prompt, with
    exponential backoff on transient failures (429 and 5xx); auth failures
    are never retried. A pull that ultimately fails leaves the cursor where
    it was. Reported API time is wall time from first attempt to final
    response, so it includes retries and backoff sleeps.
    """

    RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        config: HttpProviderConfig,
        params: SamplingParams | None = None,
        *,
        provider_id: str = "http",
    ) -> None:
        self.config = config
        self.params = params if params is not None else SamplingParams(model_id=config.model_id)
        self.provider_id = provider_id
        self._session = requests.Session()

    def key_for(self, prompt: Prompt) -> QueryKey:
        return canonical_key(self.provider_id, self.params, prompt)

    def sample(self, prompt: Prompt) -> SampleCursor:
        return self.sample_key(self.key_for(prompt))

    def sample_key(self, key: QueryKey) -> SampleCursor:
        return SampleCursor(key, _HttpSequence(self, key))

    def sample_batch(self, prompt: Prompt, n: int) -> list[ResponseRecord]:
        """Satisfy ``n`` pulls with multi-completion requests.

        At most ceil(n / batch_limit) requests are issued; records come back
        in the provider's completion order. Request-level usage is attributed
        to the first record of each request so aggregate accounting stays
        exact even though the provider does not report per-choice usage.
        """
        if n < 1:
            raise ValueError(f"sample_batch expects n >= 1, got {n}")
        key = self.key_for(prompt)
        records: list[ResponseRecord] = []
        remaining = n
        while remaining > 0:
            count = min(self.config.batch_limit, remaining)
            records.extend(self._complete(key, count))
            remaining -= count
        return records

    def _payload(self, key: QueryKey, n: int) -> dict:
        payload: dict = {
            "model": key.params.model_id,
            "messages": [{"role": "user", "content": key.prompt}],
            "temperature": key.params.temperature,
            "top_p": key.params.top_p,
            "max_tokens": key.params.max_tokens,
        }
        payload.update(dict(key.params.extra))
        if n > 1:
            payload["n"] = n
        return payload

    def _complete(self, key: QueryKey, n: int) -> list[ResponseRecord]:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {self.config.api_key}"}
        payload = self._payload(key, n)
        started = time.perf_counter()
        delay_ms = self.config.backoff_initial_ms
        last_status: int | None = None
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                jitter = 1.0 + self.config.backoff_jitter * random.uniform(-1.0, 1.0)
                time.sleep(delay_ms * jitter / 1000.0)
                delay_ms = int(delay_ms * self.config.backoff_multiplier)
            try:
                response = self._session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout_ms / 1000.0
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_status = None
                last_error = str(exc)
                continue
            if response.status_code in (401, 403):
                raise AuthFailureError(f"authentication rejected ({response.status_code})")
            if response.status_code in self.RETRYABLE_STATUSES:
                last_status = response.status_code
                last_error = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise ProviderError(f"unexpected status {response.status_code}")
            elapsed_ms = int((time.perf_counter() - started) * 1000)
            return self._parse(response, key, n, elapsed_ms)
        if last_status == 429:
            raise RateLimitedError(
                f"still rate-limited after {self.config.max_retries + 1} attempts"
            )
        raise ProviderUnavailableError(
            f"gave up after {self.config.max_retries + 1} attempts: {last_error}"
        )

    def _parse(self, response, key: QueryKey, n: int, elapsed_ms: int) -> list[ResponseRecord]:
        try:
            data = response.json()
        except ValueError as exc:
            raise MalformedResponseError(f"response body is not JSON: {exc}") from exc
        choices = data.get("choices")
        if not isinstance(choices, list) or len(choices) != n:
            got = len(choices) if isinstance(choices, list) else "no"
            raise MalformedResponseError(f"expected {n} choices, got {got}")
        usage = data.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens", 0))
        completion_tokens = int(usage.get("completion_tokens", 0))
        created_at = _now_iso()
        records = []
        for i, choice in enumerate(choices):
            try:
                text = choice["message"]["content"]
            except (KeyError, TypeError) as exc:
                raise MalformedResponseError(f"choice {i} has no message content") from exc
            if not isinstance(text, str):
                raise MalformedResponseError(f"choice {i} content is not a string")
            first = i == 0
            records.append(
                ResponseRecord(
                    text=text,
                    prompt_tokens=prompt_tokens if first else 0,
                    completion_tokens=completion_tokens if first else 0,
                    api_time_ms=elapsed_ms if first else 0,
                    provider_id=self.provider_id,
                    created_at=created_at,
                )
            )
        return records
