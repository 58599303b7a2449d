"""Chat-completion providers.

Every provider exposes ``complete(prompt) -> str`` and a ``max_concurrency``
attribute that pipeline stages use to size their worker pools.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from apf.errors import ExhaustedRetries, HttpError, ProviderError, ProviderTimeout
from apf.llm.prompts import Prompt, PromptKind

log = logging.getLogger(__name__)

RETRYABLE_STATUS_CODES = frozenset({408, 425, 429, 500, 502, 503, 504})
DEFAULT_TEMPERATURES = {
    PromptKind.ANNOTATION.value: 0.0,
    PromptKind.GENERATION.value: 0.0,
    PromptKind.PARAPHRASE.value: 0.7,
}


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    backoff: float = 0.5
    max_backoff: float = 8.0
    retry_statuses: frozenset = RETRYABLE_STATUS_CODES

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        """Sleep before retrying after failed attempt number ``attempt`` (1-based)."""
        return min(self.max_backoff, self.backoff * 2 ** (attempt - 1))


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "APF_API_KEY"
    max_concurrency: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout: float = 120.0
    temperatures: dict = field(default_factory=lambda: dict(DEFAULT_TEMPERATURES))

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    def resolved_endpoint(self) -> str:
        base = self.endpoint or os.environ.get("APF_API_BASE", "")
        if not base:
            raise ProviderError("no endpoint configured (set APF_API_BASE or provider.endpoint)")
        base = base.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"


class ChatProvider(Protocol):
    max_concurrency: int

    def complete(self, prompt: Prompt) -> str: ...


def complete(prompt: Prompt, provider: ChatProvider) -> str:
    return provider.complete(prompt)


class HttpChatClient:
    """Thread-safe client for an OpenAI-style ``/chat/completions`` endpoint."""

    def __init__(
        self,
        config: ProviderConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.max_concurrency = config.max_concurrency
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._sleep = sleep
        self._http = httpx.Client(timeout=config.timeout, transport=transport)
        self._lock = threading.Lock()
        self.attempt_log: list[int] = []

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, prompt: Prompt | str) -> dict:
        if isinstance(prompt, Prompt):
            text, kind = prompt.render(), prompt.kind.value
        else:
            text, kind = prompt, PromptKind.GENERATION.value
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": text}],
            "temperature": self.config.temperatures.get(kind, 0.0),
        }

    def complete(self, prompt: Prompt | str) -> str:
        url = self.config.resolved_endpoint()
        payload = self._payload(prompt)
        headers = self._headers()
        policy = self.config.retry
        last_status: int | None = None
        last_error = ""
        timed_out = False
        for attempt in range(1, policy.max_attempts + 1):
            try:
                with self._slots:
                    response = self._http.post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                timed_out, last_status, last_error = True, None, f"timeout: {exc}"
            except httpx.TransportError as exc:
                timed_out, last_status, last_error = False, None, f"transport error: {exc}"
            else:
                timed_out = False
                if response.is_success:
                    with self._lock:
                        self.attempt_log.append(attempt)
                    return _content(response)
                last_status, last_error = response.status_code, ""
                if response.status_code not in policy.retry_statuses:
                    with self._lock:
                        self.attempt_log.append(attempt)
                    raise HttpError(response.status_code, response.text)
            if attempt < policy.max_attempts:
                delay = policy.delay(attempt)
                log.warning("attempt %d failed (status=%s %s); retrying in %.2fs", attempt, last_status, last_error, delay)
                self._sleep(delay)
        with self._lock:
            self.attempt_log.append(policy.max_attempts)
        cls = ProviderTimeout if timed_out else ExhaustedRetries
        raise cls(policy.max_attempts, last_status, last_error)


def _content(response: httpx.Response) -> str:
    try:
        data = response.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"malformed chat-completion response: {exc!r}") from None
    if not isinstance(content, str):
        raise ProviderError("chat-completion content is not a string")
    return content
