"""Canonical identity of a sampling distribution.

Two queries denote the same distribution exactly when provider id, sampling
parameters, and prompt bytes all match. The serialization below is total and
deterministic: fixed field order, lexicographically sorted extras, shortest
round-trip float rendering, and length-framed UTF-8 strings, so the derived
digest is stable across runs, platforms, and map insertion orders.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .model import SamplingParams, Scalar

HASH_ALGORITHM = "sha256"

_FORMAT_TAG = b"query-v1\n"


@dataclass(frozen=True)
class QueryKey:
    """Identity of one sampling distribution, plus its content digest.

    Build these through :func:`canonical_key` so the digest always matches
    the canonical form. Equal digests are treated as equal keys (collisions
    are considered impossible).
    """

    provider_id: str
    params: SamplingParams
    prompt: str
    digest: str


def _frame(out: list[bytes], name: str, value: str) -> None:
    # Length framing keeps embedded separators and newlines unambiguous.
    raw = value.encode("utf-8")
    out.append(f"{name}:{len(raw)}:".encode("utf-8"))
    out.append(raw)
    out.append(b"\n")


def _scalar_text(value: Scalar) -> tuple[str, str]:
    # bool is checked before int: True is an int subclass but a distinct value.
    if value is None:
        return "n", ""
    if isinstance(value, bool):
        return "b", "true" if value else "false"
    if isinstance(value, int):
        return "i", str(value)
    if isinstance(value, float):
        return "f", repr(value)
    if isinstance(value, str):
        return "s", value
    raise TypeError(f"unsupported extra value type: {type(value).__name__}")


def canonical_bytes(provider_id: str, params: SamplingParams, prompt: str) -> bytes:
    """The canonical serialization that defines distribution identity."""
    out: list[bytes] = [_FORMAT_TAG]
    _frame(out, "provider", provider_id)
    _frame(out, "model", params.model_id)
    _frame(out, "temperature", repr(params.temperature))
    _frame(out, "top_p", repr(params.top_p))
    _frame(out, "max_tokens", str(params.max_tokens))
    out.append(f"extra:{len(params.extra)}\n".encode("utf-8"))
    for key, value in params.extra:  # already key-sorted by SamplingParams
        tag, text = _scalar_text(value)
        _frame(out, "extra-key", key)
        _frame(out, f"extra-val-{tag}", text)
    _frame(out, "prompt", prompt)
    return b"".join(out)


def canonical_key(provider_id: str, params: SamplingParams, prompt: str) -> QueryKey:
    """Build the :class:`QueryKey` for (provider, params, prompt)."""
    digest = hashlib.sha256(canonical_bytes(provider_id, params, prompt)).hexdigest()
    return QueryKey(provider_id=provider_id, params=params, prompt=prompt, digest=digest)
