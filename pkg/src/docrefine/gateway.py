"""Chat-completion and embedding access behind one interface.

Two backends: :class:`MockBackend` replays a scripted tape and hashes text
into bag-of-words vectors; :class:`HttpBackend` talks to an OpenAI-style
``/chat/completions`` + ``/embeddings`` API. :class:`Gateway` adds the
embedding cache and call accounting on top of either.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import httpx

from docrefine.errors import (
    DomainError,
    GatewayTimeout,
    InfrastructureError,
    ProviderError,
    RateLimited,
    SchemaError,
    TapeExhausted,
    TapeMismatch,
)
from docrefine.metrics import hashed_bow_embedding

log = logging.getLogger(__name__)

ROLES = ("explorer", "analyzer", "rewriter", "judge", "solver")

ROLE_TEMPERATURE = {
    "explorer": 1.0,
    "analyzer": 0.2,
    "rewriter": 0.2,
    "judge": 0.0,
    "solver": 0.0,
}

DEFAULT_CHAT_MODEL = "gpt-4o"
DEFAULT_EMBEDDING_MODEL = "text-embedding-ada-002"


@dataclass(frozen=True)
class ChatExchange:
    system: str
    user: str
    role: str = "explorer"
    temperature: float | None = None
    max_output_chars: int = 4000
    tool: str | None = None

    def __post_init__(self) -> None:
        if not self.user.strip():
            raise DomainError("chat exchange needs a non-empty user message")
        if self.role not in ROLES:
            raise DomainError(f"unknown role {self.role!r}")
        if self.temperature is not None and self.temperature < 0:
            raise DomainError("temperature must be >= 0")

    @property
    def effective_temperature(self) -> float:
        return ROLE_TEMPERATURE[self.role] if self.temperature is None else self.temperature

    @property
    def prompt(self) -> str:
        return f"{self.system}\n\n{self.user}"


class Backend(Protocol):
    name: str

    def chat(self, exchange: ChatExchange) -> str: ...

    def embed(self, text: str) -> list[float]: ...


# -- scripted mock -----------------------------------------------------------


@dataclass(frozen=True)
class TapeEntry:
    role: str
    response: str
    match_substring: str | None = None
    tool: str | None = None


def _entry_from_dict(raw: Any, index: int) -> TapeEntry:
    if not isinstance(raw, dict):
        raise SchemaError(f"tape entry {index}: expected an object")
    role = raw.get("role_tag", raw.get("role"))
    if role not in ROLES:
        raise SchemaError(f"tape entry {index}: unknown role_tag {role!r}")
    resp = raw.get("response")
    if not isinstance(resp, str):
        resp = json.dumps(resp, ensure_ascii=False) if isinstance(resp, (dict, list)) else None
    if resp is None:
        raise SchemaError(f"tape entry {index}: 'response' must be text or a JSON object")
    return TapeEntry(role=role, response=resp, match_substring=raw.get("match_substring"), tool=raw.get("tool"))


@dataclass
class Tape:
    entries: list[TapeEntry]
    vectors: dict[str, list[float]] = field(default_factory=dict)

    @classmethod
    def from_json(cls, data: str | bytes) -> Tape:
        """Accepts a bare array of entries or ``{"entries": [...], "vectors": {text: [...]}}``."""
        raw = json.loads(data)
        vectors: dict[str, list[float]] = {}
        if isinstance(raw, dict):
            vectors = {k: [float(x) for x in v] for k, v in raw.get("vectors", {}).items()}
            raw = raw.get("entries", [])
        if not isinstance(raw, list):
            raise SchemaError("tape must be a JSON array of entries")
        return cls([_entry_from_dict(e, i) for i, e in enumerate(raw)], vectors)

    @classmethod
    def load(cls, path: str | os.PathLike) -> Tape:
        return cls.from_json(Path(path).read_bytes())


class MockBackend:
    """Replays tape entries in order, one queue per (tool, role).

    Entries tagged with a tool are only served to calls for that tool; untagged
    entries form a shared fallback queue per role. Embeddings come from pinned
    vectors when the tape provides one for the exact text, else from the
    seeded hashed bag-of-words scheme.
    """

    name = "mock"

    def __init__(self, tape: Tape | None = None, seed: int = 0, dim: int = 64):
        tape = tape or Tape([])
        self.seed = seed
        self.dim = dim
        self.vectors = dict(tape.vectors)
        self._queues: dict[tuple[str | None, str], deque[TapeEntry]] = defaultdict(deque)
        for e in tape.entries:
            self._queues[(e.tool, e.role)].append(e)
        self._lock = threading.Lock()
        self.prompts: list[ChatExchange] = []
        self.embed_calls = 0

    def chat(self, exchange: ChatExchange) -> str:
        with self._lock:
            self.prompts.append(exchange)
            queue = self._queues.get((exchange.tool, exchange.role))
            if not queue:
                queue = self._queues.get((None, exchange.role))
            if not queue:
                raise TapeExhausted(f"tape exhausted for role {exchange.role!r} (tool {exchange.tool!r})")
            entry = queue.popleft()
        if entry.match_substring is not None and entry.match_substring not in exchange.prompt:
            raise TapeMismatch(f"{exchange.role} prompt does not contain {entry.match_substring!r}")
        return entry.response

    def embed(self, text: str) -> list[float]:
        with self._lock:
            self.embed_calls += 1
        if text in self.vectors:
            return list(self.vectors[text])
        return hashed_bow_embedding(text, self.seed, self.dim)


# -- HTTP --------------------------------------------------------------------


class TokenBucket:
    """Blocking token bucket; ``rate`` tokens per second, burst ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class HttpBackend:
    name = "http"

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        chat_model: str = DEFAULT_CHAT_MODEL,
        embedding_model: str = DEFAULT_EMBEDDING_MODEL,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        requests_per_second: float | None = None,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        base_url = base_url or os.environ.get("DRAFT_API_BASE")
        api_key = api_key if api_key is not None else os.environ.get("DRAFT_API_KEY")
        if not base_url:
            raise InfrastructureError("HTTP backend needs DRAFT_API_BASE")
        self.base_url = base_url.rstrip("/")
        self.chat_model = chat_model
        self.embedding_model = embedding_model
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._bucket = TokenBucket(requests_per_second) if requests_per_second else None
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            if self._bucket:
                self._bucket.acquire()
            try:
                resp = self._client.post(url, json=payload)
            except httpx.TimeoutException as exc:
                last_exc = GatewayTimeout(f"{url} timed out")
                continue
            except httpx.TransportError as exc:
                last_exc = ProviderError(0, f"transport failure: {exc}")
                continue
            if resp.status_code == 429:
                last_exc = RateLimited(f"{url} rate limited after {attempt} retries")
                continue
            if resp.status_code in _TRANSIENT_STATUS:
                last_exc = ProviderError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise ProviderError(resp.status_code, resp.text)
            return resp.json()
        log.warning("giving up on %s after %d retries", url, self.max_retries)
        assert last_exc is not None
        raise last_exc

    def chat(self, exchange: ChatExchange) -> str:
        payload = {
            "model": self.chat_model,
            "messages": [
                {"role": "system", "content": exchange.system},
                {"role": "user", "content": exchange.user},
            ],
            "temperature": exchange.effective_temperature,
            # rough chars-per-token ratio for English
            "max_tokens": max(1, exchange.max_output_chars // 4),
        }
        body = self._post("/chat/completions", payload)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(200, json.dumps(body)[:500]) from exc

    def embed(self, text: str) -> list[float]:
        body = self._post("/embeddings", {"model": self.embedding_model, "input": text})
        try:
            return [float(x) for x in body["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(200, json.dumps(body)[:500]) from exc


# -- front door --------------------------------------------------------------


class Gateway:
    """Thread-safe front for a backend: embedding cache plus call counters."""

    def __init__(self, backend: Backend, cache_embeddings: bool = True):
        self.backend = backend
        self.cache_embeddings = cache_embeddings
        self._cache: dict[str, list[float]] = {}
        self._lock = threading.Lock()
        self.chat_calls = 0
        self.embed_requests = 0
        self.cache_hits = 0

    @property
    def backend_name(self) -> str:
        return self.backend.name

    def chat(self, exchange: ChatExchange) -> str:
        with self._lock:
            self.chat_calls += 1
        return self.backend.chat(exchange)

    def embed(self, text: str) -> list[float]:
        if not text.strip():
            raise DomainError("cannot embed empty text")
        with self._lock:
            self.embed_requests += 1
            if self.cache_embeddings and text in self._cache:
                self.cache_hits += 1
                return list(self._cache[text])
        vec = self.backend.embed(text)
        if self.cache_embeddings:
            with self._lock:
                self._cache.setdefault(text, vec)
        return list(vec)

    def scoped(self, tool: str) -> ScopedGateway:
        return ScopedGateway(self, tool)


class ScopedGateway:
    """Per-tool view: tags chat calls with the tool name and counts them."""

    def __init__(self, gateway: Gateway, tool: str):
        self.gateway = gateway
        self.tool = tool
        self.chat_calls = 0
        self.embed_calls = 0

    def chat(self, exchange: ChatExchange) -> str:
        self.chat_calls += 1
        if exchange.tool != self.tool:
            exchange = ChatExchange(
                exchange.system, exchange.user, exchange.role,
                exchange.temperature, exchange.max_output_chars, self.tool,
            )
        return self.gateway.chat(exchange)

    def embed(self, text: str) -> list[float]:
        self.embed_calls += 1
        return self.gateway.embed(text)

    @property
    def llm_calls(self) -> int:
        return self.chat_calls + self.embed_calls
