"""Chat-completion backends.

Two implementations share one request/response contract: a real HTTP endpoint
and a deterministic scripted mock. Every detection pipeline must run
end-to-end against the mock with zero network access.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import requests

from .records import RecordFormatError, read_records

DEFAULT_MAX_OUTPUT = 512
DEFAULT_MAX_PROMPT_CHARS = 200_000


class BackendError(RuntimeError):
    """Base class for completion failures."""


class TransportError(BackendError):
    """The endpoint could not be reached or kept answering transiently."""


class ScriptMissError(BackendError):
    """No scripted rule matched and the script has no fallback."""


class PromptBudgetError(BackendError):
    """The prompt exceeds the configured budget; nothing is truncated."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_output: int = DEFAULT_MAX_OUTPUT
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("completion request requires a non-empty prompt")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    backend_id: str
    latency: float
    attempt: int


class RateLimiter:
    """Token bucket: capacity requests_per_minute, refilled continuously."""

    def __init__(
        self,
        requests_per_minute: float,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self._rate = requests_per_minute / 60.0
        self._capacity = float(requests_per_minute)
        self._tokens = self._capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(wait)


# ---- scripted mock ----

@dataclass(frozen=True)
class ScriptRule:
    """Matches a prompt by substring or regex; exactly one must be set."""

    response: str
    contains: str | None = None
    pattern: str | None = None

    def __post_init__(self) -> None:
        if (self.contains is None) == (self.pattern is None):
            raise ValueError("script rule needs exactly one of contains/pattern")

    def matches(self, prompt: str) -> bool:
        if self.contains is not None:
            return self.contains in prompt
        return re.search(self.pattern, prompt) is not None


@dataclass(frozen=True)
class ScriptedBehavior:
    rules: tuple[ScriptRule, ...] = ()
    fallback: str | None = None  # None means a miss is an error


def load_script(path: str | Path) -> ScriptedBehavior:
    """Read a script file: ordered match records plus at most one fallback."""
    rules: list[ScriptRule] = []
    fallback: str | None = None
    for lineno, record in read_records(path):
        where = f"{path}:{lineno}"
        kind = record.get("kind")
        if kind == "match":
            try:
                rules.append(
                    ScriptRule(
                        response=record["response"],
                        contains=record.get("contains"),
                        pattern=record.get("pattern"),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise RecordFormatError(f"{where}: bad match record: {exc}") from exc
        elif kind == "fallback":
            if record.get("fail"):
                fallback = None
            else:
                try:
                    fallback = record["response"]
                except KeyError as exc:
                    raise RecordFormatError(f"{where}: fallback needs response or fail") from exc
        else:
            raise RecordFormatError(f"{where}: unknown script record kind {kind!r}")
    return ScriptedBehavior(tuple(rules), fallback)


class ScriptedBackend:
    """Deterministic mock: the response is a pure function of (script, prompt).

    Rules are evaluated in order and the first match wins, so at most one
    fires per request. Latency is always reported as 0.0.
    """

    def __init__(self, script: ScriptedBehavior, backend_id: str = "mock") -> None:
        self.script = script
        self.backend_id = backend_id
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            for rule in self.script.rules:
                if rule.matches(request.prompt):
                    return CompletionResponse(rule.response, self.backend_id, 0.0, 1)
        if self.script.fallback is not None:
            return CompletionResponse(self.script.fallback, self.backend_id, 0.0, 1)
        raise ScriptMissError(
            f"no scripted rule matched request tagged {request.tag!r} and no fallback is set"
        )


# ---- http backend ----

_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class HttpChatBackend:
    """Chat-completions client for an OpenAI-style endpoint.

    Credentials come from the environment variable named by api_key_env,
    never from config values. Transient transport failures (connection
    errors, timeouts, 429/5xx) retry with exponential backoff up to
    retry_limit attempts; a parseable response is never retried.
    """

    def __init__(
        self,
        url: str,
        model: str,
        *,
        api_key_env: str = "FAITHCHECK_API_KEY",
        auth_header: str = "Authorization",
        retry_limit: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        requests_per_minute: float | None = None,
        max_prompt_chars: int = DEFAULT_MAX_PROMPT_CHARS,
        session: Any | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.auth_header = auth_header
        self.retry_limit = max(1, retry_limit)
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.max_prompt_chars = max_prompt_chars
        self.backend_id = f"http:{model}"
        self._session = session if session is not None else requests.Session()
        self._sleep = sleep
        self._limiter = (
            RateLimiter(requests_per_minute) if requests_per_minute is not None else None
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            value = f"Bearer {key}" if self.auth_header == "Authorization" else key
            headers[self.auth_header] = value
        return headers

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if len(request.prompt) > self.max_prompt_chars:
            raise PromptBudgetError(
                f"prompt tagged {request.tag!r} is {len(request.prompt)} chars, "
                f"budget is {self.max_prompt_chars}; refusing to truncate"
            )
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        }
        last_error: Exception | None = None
        for attempt in range(1, self.retry_limit + 1):
            if self._limiter is not None:
                self._limiter.acquire()
            started = time.monotonic()
            try:
                response = self._session.post(
                    self.url, json=payload, headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                self._backoff(attempt)
                continue
            latency = time.monotonic() - started
            if response.status_code in _TRANSIENT_STATUS:
                last_error = TransportError(
                    f"endpoint answered {response.status_code} for {request.tag!r}"
                )
                self._backoff(attempt)
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"endpoint answered {response.status_code} for {request.tag!r}: "
                    f"{response.text[:200]}"
                )
            try:
                body = response.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(
                    f"endpoint returned an unparseable body for {request.tag!r}: {exc}"
                ) from exc
            if not isinstance(text, str):
                raise TransportError(f"endpoint returned non-text content for {request.tag!r}")
            return CompletionResponse(text, self.backend_id, latency, attempt)
        raise TransportError(
            f"gave up on {request.tag!r} after {self.retry_limit} attempts: {last_error}"
        )

    def _backoff(self, attempt: int) -> None:
        if attempt < self.retry_limit:
            self._sleep(self.backoff_base * (2 ** (attempt - 1)))


def load_http_config(path: str | Path) -> HttpChatBackend:
    """Build an HTTP backend from a JSON config file."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return HttpChatBackend(
            url=raw["url"],
            model=raw["model"],
            api_key_env=raw.get("api_key_env", "FAITHCHECK_API_KEY"),
            auth_header=raw.get("auth_header", "Authorization"),
            retry_limit=int(raw.get("retry_limit", 3)),
            backoff_base=float(raw.get("backoff_base", 0.5)),
            timeout=float(raw.get("timeout", 60.0)),
            requests_per_minute=(
                float(raw["requests_per_minute"]) if "requests_per_minute" in raw else None
            ),
            max_prompt_chars=int(raw.get("max_prompt_chars", DEFAULT_MAX_PROMPT_CHARS)),
        )
    except KeyError as exc:
        raise RecordFormatError(f"{path}: http backend config missing field {exc}") from exc
