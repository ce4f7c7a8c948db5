"""Role-based access to chat models.

Three logical roles are used throughout the framework: the *agent* that
generates candidate solutions, the *critic* that critiques and scores them,
and the *judge* used for per-parameter grounding checks.  Each role is backed
by either an HTTP chat-completion endpoint or a deterministic scripted model
(used for tests and offline demos).  Responses can be cached in an
append-only JSONL file so interrupted runs resume without re-spending calls.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

ROLES = ("agent", "critic", "judge")

MESSAGE_ROLES = ("system", "user", "assistant", "tool_result")


class GatewayError(Exception):
    """Base class for model-gateway failures."""


class TransportError(GatewayError):
    """Network-level failure (timeout, connection error, non-2xx status)."""


class RetryExhaustedError(GatewayError):
    """Raised after retry_budget + 1 attempts all failed."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class ResponseDecodeError(GatewayError):
    """Provider returned a payload missing an expected field."""

    def __init__(self, field_name: str, message: str | None = None):
        super().__init__(message or f"malformed provider response: missing or invalid field '{field_name}'")
        self.field_name = field_name


class ScriptExhaustedError(GatewayError):
    """A scripted model ran out of canned responses."""


@dataclass(frozen=True)
class ChatMessage:
    """One message in a chat transcript.

    ``tool_call`` carries a structured payload ({"name": ..., "arguments": {...}})
    when the message represents a proposed or executed tool call.
    """

    role: str
    content: str
    tool_call: Optional[dict] = None

    def __post_init__(self):
        if self.role not in MESSAGE_ROLES:
            raise ValueError(f"unknown message role: {self.role!r}")
        if self.tool_call is not None and self.role not in ("assistant", "tool_result"):
            raise ValueError("tool_call payloads belong to assistant or tool_result messages")


@dataclass
class ModelEndpointConfig:
    """Configuration for one model endpoint.

    ``script`` is only consulted when ``kind == "scripted"`` and holds either
    an ordered list of completions or a mapping from substring pattern to a
    completion (str, reusable) or list of completions (consumed in order).
    """

    kind: str = "scripted"
    base_url: Optional[str] = None
    model_name: str = "scripted"
    temperature: float = 0.0
    max_tokens: int = 1024
    retry_budget: int = 2
    timeout: float = 60.0
    provider: str = "openai"
    api_key_env: str = "AGENTSEARCH_API_KEY"
    script: object = None

    def __post_init__(self):
        if self.kind not in ("http_chat", "scripted"):
            raise ValueError(f"unknown endpoint kind: {self.kind!r}")
        if self.kind == "http_chat" and not self.base_url:
            raise ValueError("base_url is required for http_chat endpoints")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelEndpointConfig":
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown endpoint config fields: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base_url": self.base_url,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "retry_budget": self.retry_budget,
            "timeout": self.timeout,
            "provider": self.provider,
            "api_key_env": self.api_key_env,
            "script": self.script,
        }


def cache_key(role: str, messages: list[ChatMessage], config: ModelEndpointConfig) -> str:
    """Stable hash of everything that influences a completion.

    Any change to message content, order, role, model_name, or temperature
    changes the key.  Stable across processes (pure sha256 of canonical JSON).
    """
    payload = {
        "role": role,
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": [
            {"role": m.role, "content": m.content, "tool_call": m.tool_call}
            for m in messages
        ],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only response cache persisted as line-delimited JSON.

    Each record is ``{"key": ..., "role": ..., "response": ..., "timestamp": ...}``.
    Writes are serialized so many search workers can share one cache.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                self._entries[record["key"]] = record["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[str]:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, role: str, response: str) -> None:
        with self._lock:
            self._entries[key] = response
            if self.path is not None:
                record = {"key": key, "role": role, "response": response, "timestamp": time.time()}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")


class ScriptedModel:
    """Deterministic canned-response model for tests and offline demos.

    The script is either an ordered list consumed front to back, or a mapping
    from substring pattern to responses.  Pattern matching scans the
    concatenated message contents; the first matching pattern (in insertion
    order) wins.  A pattern's value may be a plain string (returned every
    time) or a list consumed in order.
    """

    def __init__(self, script):
        if isinstance(script, dict):
            self._patterns = {k: (list(v) if isinstance(v, list) else v) for k, v in script.items()}
            self._sequence = None
        elif isinstance(script, (list, tuple)):
            self._patterns = None
            self._sequence = list(script)
        else:
            raise ValueError("script must be a list of responses or a pattern->response mapping")
        self.cursor = 0
        self._pattern_cursors: dict[str, int] = {}

    def complete(self, messages: list[ChatMessage]) -> str:
        if self._sequence is not None:
            if self.cursor >= len(self._sequence):
                raise ScriptExhaustedError(
                    f"scripted model exhausted after {len(self._sequence)} responses"
                )
            response = self._sequence[self.cursor]
            self.cursor += 1
            return response
        haystack = "\n".join(m.content for m in messages)
        for pattern, value in self._patterns.items():
            if pattern in haystack:
                if isinstance(value, str):
                    return value
                idx = self._pattern_cursors.get(pattern, 0)
                if idx >= len(value):
                    raise ScriptExhaustedError(f"scripted responses for pattern {pattern!r} exhausted")
                self._pattern_cursors[pattern] = idx + 1
                return value[idx]
        raise ScriptExhaustedError("no scripted pattern matched the request")


def _default_post(url: str, headers: dict, payload: dict, timeout: float) -> dict:
    """POST JSON and return the parsed body, mapping failures to TransportError."""
    import requests

    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    if resp.status_code != 200:
        raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise ResponseDecodeError("body", "provider response is not valid JSON") from exc


class HttpChatModel:
    """Thin chat-completion client with a config-selected provider adapter.

    ``post`` is injectable so tests can exercise request building, response
    decoding, and the retry policy without any network.
    """

    def __init__(self, config: ModelEndpointConfig, post: Callable[..., dict] | None = None):
        self.config = config
        self._post = post or _default_post

    def _headers(self) -> dict:
        api_key = os.environ.get(self.config.api_key_env, "")
        if self.config.provider == "anthropic":
            return {"x-api-key": api_key, "anthropic-version": "2023-06-01"}
        return {"Authorization": f"Bearer {api_key}"}

    def _build_request(self, messages: list[ChatMessage]) -> tuple[str, dict]:
        cfg = self.config
        if cfg.provider == "anthropic":
            system = "\n\n".join(m.content for m in messages if m.role == "system")
            payload = {
                "model": cfg.model_name,
                "max_tokens": cfg.max_tokens,
                "temperature": cfg.temperature,
                "system": system,
                "messages": [
                    {"role": "assistant" if m.role == "assistant" else "user", "content": m.content}
                    for m in messages
                    if m.role != "system"
                ],
            }
            url = cfg.base_url.rstrip("/") + "/v1/messages"
            return url, payload
        # Generic OpenAI-style chat completion.
        role_map = {"system": "system", "user": "user", "assistant": "assistant", "tool_result": "user"}
        payload = {
            "model": cfg.model_name,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "messages": [{"role": role_map[m.role], "content": m.content} for m in messages],
        }
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        return url, payload

    def _parse_response(self, body: dict) -> str:
        if self.config.provider == "anthropic":
            try:
                text = body["content"][0]["text"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ResponseDecodeError("content[0].text") from exc
        else:
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ResponseDecodeError("choices[0].message.content") from exc
        if not isinstance(text, str):
            raise ResponseDecodeError("content", "completion text is not a string")
        return text

    def complete(self, messages: list[ChatMessage]) -> tuple[str, int]:
        """Return (completion text, attempts made).

        Transport failures are retried up to retry_budget extra times;
        malformed payloads raise ResponseDecodeError immediately.
        """
        url, payload = self._build_request(messages)
        attempts = 0
        last_error: Exception | None = None
        while attempts <= self.config.retry_budget:
            attempts += 1
            try:
                body = self._post(url, self._headers(), payload, self.config.timeout)
                return self._parse_response(body), attempts
            except TransportError as exc:
                last_error = exc
        raise RetryExhaustedError(
            f"model call failed after {attempts} attempts: {last_error}", attempts=attempts
        )


@dataclass
class ModelReply:
    """Completion plus bookkeeping that experiments log in transcripts."""

    text: str
    attempts: int = 1
    from_cache: bool = False


class ModelGateway:
    """Dispatches role-tagged completion requests to configured endpoints.

    Safe for concurrent use by many search workers: the cache serializes
    writes and HTTP models are stateless.  Scripted models are stateful and
    must be confined to one worker each.
    """

    def __init__(
        self,
        endpoints: dict[str, ModelEndpointConfig],
        cache: ResponseCache | None = None,
        post: Callable[..., dict] | None = None,
    ):
        self.endpoints = dict(endpoints)
        self.cache = cache
        self._models: dict[str, object] = {}
        self._log_lock = threading.Lock()
        self.call_log: list[dict] = []
        for role, cfg in self.endpoints.items():
            if role not in ROLES:
                raise ValueError(f"unknown model role: {role!r}")
            if cfg.kind == "scripted":
                if cfg.script is None:
                    raise ValueError(f"scripted endpoint for role {role!r} has no script")
                self._models[role] = ScriptedModel(cfg.script)
            else:
                self._models[role] = HttpChatModel(cfg, post=post)

    def complete(self, role: str, messages: list[ChatMessage]) -> ModelReply:
        """Complete a chat for the given role, consulting the cache first."""
        if role not in self._models:
            raise ValueError(f"no endpoint configured for role {role!r}")
        if not messages:
            raise ValueError("messages must be nonempty")
        if messages[0].role != "system":
            raise ValueError("first message must be the role's system prompt")
        cfg = self.endpoints[role]
        key = cache_key(role, messages, cfg)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                reply = ModelReply(text=hit, attempts=0, from_cache=True)
                self._record(role, reply)
                return reply
        model = self._models[role]
        if isinstance(model, ScriptedModel):
            reply = ModelReply(text=model.complete(messages), attempts=1)
        else:
            text, attempts = model.complete(messages)
            reply = ModelReply(text=text, attempts=attempts)
        if self.cache is not None:
            self.cache.put(key, role, reply.text)
        self._record(role, reply)
        return reply

    def _record(self, role: str, reply: ModelReply) -> None:
        with self._log_lock:
            self.call_log.append(
                {"role": role, "attempts": reply.attempts, "cached": reply.from_cache}
            )
