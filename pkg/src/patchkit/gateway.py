"""Uniform chat interface over interchangeable model backends.

Two backends ship: an HTTP chat-completion client for real serving endpoints
and a scripted backend that replays recorded completions keyed by prompt
digest, which is what makes the whole pipeline runnable and testable offline.
Reasoning traces are always separated from final answers before anything
downstream sees a completion.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import BadRequest, RetryExhausted, ScriptMiss, TemplateError
from .repo_index import estimate_tokens
from .templates import TEMPLATES, substitute

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

DEFAULT_REASONING_DELIMITERS = ("<think>", "</think>")
DEFAULT_MAX_OUTPUT_TOKENS = 4096


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    model_tag: str
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    sample_count: int = 1

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        for m in self.messages:
            if m.role not in ROLES:
                raise ValueError(f"unknown role {m.role!r}")
        non_system = [m for m in self.messages if m.role != "system"]
        if non_system and non_system[0].role != "user":
            raise ValueError("first non-system message must be from the user")


@dataclass(frozen=True)
class Completion:
    answer_text: str
    reasoning_text: str | None = None
    finish_reason: str = "stop"  # stop | length | error
    output_token_estimate: int = 0


@dataclass(frozen=True)
class ChatResponse:
    samples: tuple[Completion, ...]
    backend_id: str
    latency_ms: int
    error: str | None = None


def canonical_prompt_text(messages) -> str:
    """Stable textual form of a conversation, independent of object encoding."""
    return "\n\n".join(f"[{m.role}]\n{m.content}" for m in messages)


def scripted_digest(model_tag: str, messages, sample_index: int) -> str:
    """Replay key: SHA-256 over (model_tag, canonical prompt text, sample index)."""
    h = hashlib.sha256()
    h.update(model_tag.encode("utf-8"))
    h.update(b"\x00")
    h.update(canonical_prompt_text(messages).encode("utf-8"))
    h.update(b"\x00")
    h.update(str(sample_index).encode("utf-8"))
    return h.hexdigest()


def split_reasoning(raw_answer: str, delimiters=DEFAULT_REASONING_DELIMITERS):
    """Split a delimited reasoning block out of an answer.

    Only an exactly-once, balanced delimiter pair is split; anything else
    (absent, unbalanced, nested) leaves the answer untouched with no
    reasoning, and unbalanced input is logged.
    """
    open_d, close_d = delimiters
    opens = raw_answer.count(open_d)
    closes = raw_answer.count(close_d)
    if opens == 0 and closes == 0:
        return None, raw_answer
    start = raw_answer.find(open_d)
    end = raw_answer.find(close_d)
    if opens != 1 or closes != 1 or start < 0 or end < start:
        logger.warning("unbalanced reasoning delimiters; treating as plain answer")
        return None, raw_answer
    reasoning = raw_answer[start + len(open_d) : end]
    remainder = raw_answer[:start] + raw_answer[end + len(close_d) :]
    return reasoning, remainder.lstrip("\n")


def render_template(
    template_id: str,
    bindings: dict[str, str],
    sample_count: int = 1,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    model_tag: str | None = None,
    temperature: float | None = None,
) -> ChatRequest:
    """Build a single-user-turn request from a registered template.

    Every placeholder in the template must have a binding; an unresolved
    placeholder raises instead of being emitted.
    """
    if template_id not in TEMPLATES:
        raise TemplateError(template_id)
    spec = TEMPLATES[template_id]
    prompt = substitute(spec.text, bindings)
    return ChatRequest(
        messages=(Message("user", prompt),),
        model_tag=model_tag if model_tag is not None else spec.model_tag,
        temperature=spec.temperature if temperature is None else temperature,
        max_output_tokens=max_output_tokens,
        sample_count=sample_count,
    )


class TransientBackendError(Exception):
    """Retryable transport failure (connection error or HTTP 5xx)."""


class ScriptedBackend:
    """Deterministic replay backend over a directory of JSON records.

    Each ``*.json`` file holds one record or a list of records shaped
    ``{"digest": ..., "completion": ..., "reasoning": ...}``. Lookup is by
    the scripted digest of (model_tag, prompt, sample index); a miss is an
    error naming the digest so fixtures can be completed.
    """

    backend_id = "scripted"

    def __init__(self, directory):
        self.directory = Path(directory)
        self._records: dict[str, dict] = {}
        if self.directory.is_dir():
            for path in sorted(self.directory.glob("*.json")):
                loaded = json.loads(path.read_text(encoding="utf-8"))
                entries = loaded if isinstance(loaded, list) else [loaded]
                for rec in entries:
                    self._records[rec["digest"]] = rec

    def __len__(self) -> int:
        return len(self._records)

    def complete(self, request: ChatRequest) -> tuple[Completion, ...]:
        samples = []
        for i in range(request.sample_count):
            digest = scripted_digest(request.model_tag, request.messages, i)
            rec = self._records.get(digest)
            if rec is None:
                raise ScriptMiss(digest, request.model_tag)
            answer = rec["completion"]
            reasoning = rec.get("reasoning")
            if reasoning is None:
                reasoning, answer = split_reasoning(answer)
            samples.append(
                Completion(
                    answer_text=answer,
                    reasoning_text=reasoning,
                    finish_reason=rec.get("finish_reason", "stop"),
                    output_token_estimate=estimate_tokens(answer),
                )
            )
        return tuple(samples)


class HttpBackend:
    """Chat-completion client for an OpenAI-style JSON endpoint.

    Sends ``{model, messages, temperature, n, max_tokens}`` and reads
    ``choices[i].message.content``. 4xx responses raise immediately; 5xx and
    transport errors raise a retryable error for the gateway's retry loop.
    """

    backend_id = "http"

    def __init__(self, endpoint: str, auth_token: str = "", timeout_s: float = 120.0):
        self.endpoint = endpoint
        self.auth_token = auth_token
        self.timeout_s = timeout_s

    def complete(self, request: ChatRequest) -> tuple[Completion, ...]:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        payload = {
            "model": request.model_tag,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "n": request.sample_count,
            "max_tokens": request.max_output_tokens,
        }
        try:
            resp = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise TransientBackendError(str(exc)) from exc
        if 400 <= resp.status_code < 500:
            raise BadRequest(resp.status_code, resp.text[:500])
        if resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        body = resp.json()
        samples = []
        for choice in body.get("choices", []):
            content = choice.get("message", {}).get("content", "")
            finish = choice.get("finish_reason", "stop")
            reasoning, answer = split_reasoning(content)
            samples.append(
                Completion(
                    answer_text=answer,
                    reasoning_text=reasoning,
                    finish_reason=finish if finish in ("stop", "length") else "error",
                    output_token_estimate=estimate_tokens(content),
                )
            )
        return tuple(samples)


class Gateway:
    """Request router with retry, concurrency ceiling, and truncation logging."""

    def __init__(
        self,
        backend,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
        max_concurrency: int | None = None,
    ):
        self.backend = backend
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._gate = (
            threading.BoundedSemaphore(max_concurrency) if max_concurrency else None
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        start = time.monotonic()
        error = None
        samples: tuple[Completion, ...] = ()
        for attempt in range(self.max_attempts):
            try:
                if self._gate:
                    with self._gate:
                        samples = self.backend.complete(request)
                else:
                    samples = self.backend.complete(request)
                break
            except TransientBackendError as exc:
                error = str(exc)
                if attempt + 1 >= self.max_attempts:
                    raise RetryExhausted(
                        f"{self.max_attempts} attempts failed; last error: {error}"
                    ) from exc
                delay = self.backoff_s * (2**attempt)
                logger.warning(
                    "transient backend error (attempt %d/%d), retrying in %.1fs: %s",
                    attempt + 1, self.max_attempts, delay, error,
                )
                time.sleep(delay)
        latency_ms = int((time.monotonic() - start) * 1000)
        truncated = sum(1 for s in samples if s.finish_reason == "length")
        if truncated:
            logger.warning(
                "%d/%d samples truncated by max_output_tokens (model_tag=%s)",
                truncated, len(samples), request.model_tag,
            )
        short = None
        if len(samples) != request.sample_count:
            short = f"got {len(samples)} of {request.sample_count} samples"
            logger.warning("%s (model_tag=%s)", short, request.model_tag)
        return ChatResponse(
            samples=samples,
            backend_id=self.backend.backend_id,
            latency_ms=latency_ms,
            error=short,
        )


def write_script_record(
    directory, model_tag: str, messages, sample_index: int, completion: str,
    reasoning: str | None = None,
) -> str:
    """Store one replay record; returns the digest used as the filename."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digest = scripted_digest(model_tag, messages, sample_index)
    record = {"digest": digest, "completion": completion, "reasoning": reasoning}
    (directory / f"{digest}.json").write_text(
        json.dumps(record, ensure_ascii=False, indent=1), encoding="utf-8"
    )
    return digest
