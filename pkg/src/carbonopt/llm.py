"""Pluggable chat-completion client.

Speaks the de-facto standard chat-completion wire format (JSON POST with
model/messages/temperature/max_tokens and a bearer token), so any compatible
hosted or local endpoint works. A deterministic offline mock backend serves
tests and air-gapped runs; mock mode never touches the network.

The API key is read from a named environment variable and never appears in
logs or error messages.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

VALID_ROLES = ("system", "user", "assistant")
RETRYABLE_STATUS = (429,)


class LlmError(Exception):
    """Base class for client failures."""


class MissingApiKeyError(LlmError):
    """The configured environment variable holds no API key."""


class ApiStatusError(LlmError):
    """Non-retryable HTTP error from the endpoint."""

    def __init__(self, status_code: int, body: str):
        super().__init__(f"endpoint returned {status_code}: {body[:500]}")
        self.status_code = status_code
        self.body = body


class RetriesExhaustedError(LlmError):
    """Every attempt failed with a retryable error."""

    def __init__(self, attempts: list[str]):
        super().__init__("retries exhausted: " + "; ".join(attempts))
        self.attempts = attempts


class MalformedResponseError(LlmError):
    """The endpoint answered 200 with an unparseable payload."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"role must be one of {VALID_ROLES}, got {self.role!r}")
        if not self.content:
            raise ValueError("message content must be nonempty")


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int
    completion_tokens: int
    backend_id: str


@dataclass
class ClientConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    api_key_env_var: str = "OPENAI_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 1.0

    def __post_init__(self):
        if self.timeout <= 0.0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def serialize_request(request: ChatRequest) -> dict:
    return {
        "model": request.model_name,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }


def parse_request(payload: dict) -> ChatRequest:
    return ChatRequest(
        model_name=payload["model"],
        messages=tuple(ChatMessage(m["role"], m["content"]) for m in payload["messages"]),
        temperature=payload["temperature"],
        max_tokens=payload["max_tokens"],
    )


def parse_response(payload: dict, default_backend: str = "") -> ChatResponse:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"cannot extract first choice: {exc}") from exc
    usage = payload.get("usage", {})
    return ChatResponse(
        content=content,
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        completion_tokens=int(usage.get("completion_tokens", 0)),
        backend_id=payload.get("model", default_backend),
    )


def complete(
    config: ClientConfig,
    request: ChatRequest,
    transport: httpx.BaseTransport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatResponse:
    """POST the request to the configured endpoint.

    Transient failures (timeouts, 429, 5xx) are retried with exponential
    backoff base * 2^attempt, up to max_retries extra attempts. Other 4xx
    statuses fail immediately with the status and body attached.
    """
    api_key = os.environ.get(config.api_key_env_var)
    if not api_key:
        raise MissingApiKeyError(
            f"environment variable {config.api_key_env_var} is unset or empty"
        )
    body = serialize_request(request)
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
    attempts: list[str] = []
    with httpx.Client(transport=transport, timeout=config.timeout) as client:
        for attempt in range(config.max_retries + 1):
            try:
                resp = client.post(config.endpoint_url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                attempts.append(f"attempt {attempt}: timeout ({type(exc).__name__})")
            except httpx.TransportError as exc:
                attempts.append(f"attempt {attempt}: transport error ({type(exc).__name__})")
            else:
                if resp.status_code == 200:
                    return parse_response(resp.json(), default_backend=request.model_name)
                if resp.status_code in RETRYABLE_STATUS or resp.status_code >= 500:
                    attempts.append(f"attempt {attempt}: status {resp.status_code}")
                else:
                    raise ApiStatusError(resp.status_code, resp.text)
            if attempt < config.max_retries:
                sleep(config.backoff_base * 2**attempt)
    raise RetriesExhaustedError(attempts)


def prompt_hash(request: ChatRequest) -> str:
    """SHA-256 over the exact message bytes; any one-character change in any
    content produces a different key."""
    digest = hashlib.sha256()
    for m in request.messages:
        digest.update(m.role.encode())
        digest.update(b"\x1e")
        digest.update(m.content.encode())
        digest.update(b"\x1f")
    return digest.hexdigest()


def _proxy_tokens(text: str) -> int:
    return (len(text) + 3) // 4


@dataclass
class MockLlmBackend:
    """Deterministic offline backend keyed by prompt hash.

    Unknown prompts get a fixed fallback template naming the hash, so fully
    offline runs always complete. Token counts use the ceil(len/4) proxy.
    """

    seed_table: dict[str, str] = field(default_factory=dict)
    backend_id: str = "mock"

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = prompt_hash(request)
        content = self.seed_table.get(
            key, f"[{self.backend_id}] no canned response for prompt {key}"
        )
        prompt_tokens = sum(_proxy_tokens(m.content) for m in request.messages)
        return ChatResponse(
            content=content,
            prompt_tokens=prompt_tokens,
            completion_tokens=_proxy_tokens(content),
            backend_id=self.backend_id,
        )


def mock_backend(seed_table: dict[str, str] | None = None) -> MockLlmBackend:
    return MockLlmBackend(dict(seed_table or {}))


def echo_backend() -> MockLlmBackend:
    """Mock variant that echoes the last user message back."""

    class _Echo(MockLlmBackend):
        def complete(self, request: ChatRequest) -> ChatResponse:
            last_user = next(
                (m.content for m in reversed(request.messages) if m.role == "user"), ""
            )
            prompt_tokens = sum(_proxy_tokens(m.content) for m in request.messages)
            return ChatResponse(last_user, prompt_tokens, _proxy_tokens(last_user), "mock-echo")

    return _Echo()
