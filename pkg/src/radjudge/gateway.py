"""Chat-completion backends: live HTTP, replay from fixtures, and record.

Replay fixtures live one per file under a directory; the file name is the
hex SHA-256 of the canonicalised request content plus the iteration index and
the file body is the raw assistant text.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .errors import (
    FixtureMiss,
    GatewayError,
    MissingCredential,
    ProviderError,
    TransportFailure,
)

log = logging.getLogger(__name__)

ENV_API_BASE = "RADJUDGE_API_BASE"
ENV_API_KEY = "RADJUDGE_API_KEY"
ENV_MODEL = "RADJUDGE_MODEL"

DEFAULT_MODEL = "gpt-4"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 2048
DEFAULT_MAX_INFLIGHT = 4


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    model_name: str = DEFAULT_MODEL

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    backend_id: str
    latency_ms: int = 0


class Backend(Protocol):
    backend_id: str

    def complete(self, request: CompletionRequest, iteration: int = 0) -> BackendResponse: ...


def fixture_key(request: CompletionRequest, iteration: int = 0) -> str:
    payload = json.dumps(
        {"system": request.system_text, "user": request.user_text, "iteration": iteration},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_fixture(directory, request: CompletionRequest, iteration: int, text: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / fixture_key(request, iteration)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


class ReplayBackend:
    """Serves recorded responses; immutable once constructed."""

    backend_id = "replay"

    def __init__(self, fixtures_dir):
        self.fixtures_dir = Path(fixtures_dir)
        self._store: dict[str, str] = {}
        if self.fixtures_dir.is_dir():
            for path in self.fixtures_dir.iterdir():
                if path.is_file() and not path.name.startswith("."):
                    with path.open(encoding="utf-8", newline="") as fh:
                        self._store[path.name] = fh.read()

    def __len__(self) -> int:
        return len(self._store)

    def complete(self, request: CompletionRequest, iteration: int = 0) -> BackendResponse:
        key = fixture_key(request, iteration)
        try:
            text = self._store[key]
        except KeyError:
            raise FixtureMiss(key) from None
        return BackendResponse(text=text, backend_id=self.backend_id, latency_ms=0)


class LiveBackend:
    """OpenAI-compatible ``/chat/completions`` client with retry and backoff.

    Retries HTTP 429, 5xx and transport errors; makes at most
    ``1 + max_retries`` attempts per call.
    """

    backend_id = "live"
    RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        *,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        timeout: float = 120.0,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        api_base = api_base or os.environ.get(ENV_API_BASE, "").strip()
        api_key = api_key or os.environ.get(ENV_API_KEY, "").strip()
        if not api_key:
            raise MissingCredential(f"set {ENV_API_KEY} to use the live backend")
        if not api_base:
            raise MissingCredential(f"set {ENV_API_BASE} to use the live backend")
        self.api_base = api_base.rstrip("/")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._client = httpx.Client(
            headers={"Authorization": f"Bearer {api_key}", "api-key": api_key},
            timeout=timeout,
            transport=transport,
        )
        self.attempts = 0

    def close(self) -> None:
        self._client.close()

    def _delay(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * (2 ** attempt)) * (0.5 + random.random() / 2)

    def complete(self, request: CompletionRequest, iteration: int = 0) -> BackendResponse:
        body = {
            "model": request.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = f"{self.api_base}/chat/completions"
        last_error = ""
        with self._slots:
            for attempt in range(self.max_retries + 1):
                self.attempts += 1
                start = time.monotonic()
                try:
                    resp = self._client.post(url, json=body)
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                else:
                    if resp.status_code == 200:
                        latency = int((time.monotonic() - start) * 1000)
                        return BackendResponse(_message_text(resp), self.backend_id, latency)
                    if resp.status_code not in self.RETRY_STATUS:
                        raise ProviderError(resp.status_code, resp.text)
                    last_error = f"HTTP {resp.status_code}"
                if attempt < self.max_retries:
                    delay = self._delay(attempt)
                    log.warning("attempt %d failed (%s); retrying in %.1fs", attempt + 1, last_error, delay)
                    self._sleep(delay)
        raise TransportFailure(f"gave up after {self.max_retries + 1} attempts: {last_error}")


def _message_text(resp: httpx.Response) -> str:
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise ProviderError(resp.status_code, resp.text) from None


class RecordBackend:
    """Wraps another backend and stores every response as a replay fixture."""

    backend_id = "record"

    def __init__(self, inner: Backend, fixtures_dir):
        self.inner = inner
        self.fixtures_dir = Path(fixtures_dir)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest, iteration: int = 0) -> BackendResponse:
        response = self.inner.complete(request, iteration)
        with self._lock:
            write_fixture(self.fixtures_dir, request, iteration, response.text)
        return BackendResponse(response.text, self.backend_id, response.latency_ms)


def evaluate_with_iterations(backend: Backend, request: CompletionRequest, iterations: int) -> list[BackendResponse]:
    """Sample ``iterations`` independent completions, in iteration order."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    responses = []
    for i in range(iterations):
        try:
            responses.append(backend.complete(request, i))
        except GatewayError as exc:
            exc.iteration = i
            raise
    return responses


def make_backend(kind: str, fixtures_dir=None, **live_kwargs) -> Backend:
    if kind == "replay":
        if fixtures_dir is None:
            raise ValueError("replay backend needs a fixtures directory")
        return ReplayBackend(fixtures_dir)
    if kind == "live":
        return LiveBackend(**live_kwargs)
    if kind == "record":
        if fixtures_dir is None:
            raise ValueError("record backend needs a fixtures directory")
        return RecordBackend(LiveBackend(**live_kwargs), fixtures_dir)
    raise ValueError(f"unknown backend {kind!r}")
