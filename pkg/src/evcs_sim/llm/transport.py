"""Chat-completion transport: live HTTP, recording, and fixture replay.

Fixtures are JSON Lines. The first line carries metadata
(``{"meta": {...}}``), every following line one exchange
(``{"fingerprint": ..., "response_text": ...}``).  A fingerprint is the
SHA-256 of the canonical request body, so any prompt change misses.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Protocol

import httpx

from ..errors import FixtureMiss, TransportError

log = logging.getLogger(__name__)

API_URL_ENV = "EVCS_SIM_API_URL"
API_KEY_ENV = "EVCS_SIM_API_KEY"


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    model_name: str = "gpt-4"
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    def body(self) -> dict[str, Any]:
        return {
            "model": self.model_name,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": self.user_prompt},
            ],
        }

    def fingerprint(self) -> str:
        return fingerprint(self.body())


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(body: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatExchange:
    system_prompt: str
    user_prompt: str
    model_name: str
    temperature: float
    response_text: str
    latency_ms: float


class ChatClient(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class HttpChatClient:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries."""

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        *,
        timeout_s: float = 30.0,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.url = url
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(timeout=timeout_s, headers=headers, transport=transport)
        self.exchanges: list[ChatExchange] = []
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls, **kwargs: Any) -> HttpChatClient:
        url = os.environ.get(API_URL_ENV, "").strip()
        if not url:
            raise TransportError(f"{API_URL_ENV} is not set")
        return cls(url, os.environ.get(API_KEY_ENV) or None, **kwargs)

    def complete(self, request: ChatRequest) -> str:
        last: Exception | None = None
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            t0 = time.perf_counter()
            try:
                resp = self._http.post(self.url, json=request.body())
            except httpx.HTTPError as exc:
                last = exc
                log.warning("chat request attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = TransportError(f"HTTP {resp.status_code}")
                log.warning("chat request attempt %d: HTTP %d", attempt + 1, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion body: {exc}") from exc
            with self._lock:
                self.exchanges.append(
                    ChatExchange(
                        request.system_prompt,
                        request.user_prompt,
                        request.model_name,
                        request.temperature,
                        text,
                        (time.perf_counter() - t0) * 1000.0,
                    )
                )
            return text
        raise TransportError(f"gave up after {self.max_retries} attempts: {last}")

    def close(self) -> None:
        self._http.close()


@dataclass
class Fixture:
    responses: dict[str, str] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> Fixture:
        fx = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "meta" in rec:
                    fx.meta = rec["meta"]
                    continue
                fp = rec["fingerprint"]
                if fp in fx.responses:
                    raise ValueError(f"{path}:{lineno}: duplicate fingerprint {fp[:16]}")
                fx.responses[fp] = rec["response_text"]
        return fx

    def dump(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(canonical_json({"meta": self.meta}) + "\n")
            for fp, text in self.responses.items():
                fh.write(canonical_json({"fingerprint": fp, "response_text": text}) + "\n")
        os.replace(tmp, path)


class ReplayClient:
    """Serves recorded responses; tracks hits and misses for coverage reports."""

    def __init__(self, fixture: Fixture) -> None:
        self.fixture = fixture
        self.hits: list[str] = []
        self.misses: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_path(cls, path: str | Path) -> ReplayClient:
        return cls(Fixture.load(path))

    def complete(self, request: ChatRequest) -> str:
        fp = request.fingerprint()
        text = self.fixture.responses.get(fp)
        with self._lock:
            (self.misses if text is None else self.hits).append(fp)
        if text is None:
            raise FixtureMiss(fp)
        return text


class RecordingClient:
    """Wraps a live client and keeps every successful exchange for a fixture. Single writer."""

    def __init__(self, inner: ChatClient, model_name: str = "") -> None:
        self.inner = inner
        self.fixture = Fixture(meta={"model": model_name, "recorded": datetime.now(timezone.utc).isoformat()})
        self.failures: list[str] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        try:
            text = self.inner.complete(request)
        except TransportError as exc:
            with self._lock:
                self.failures.append(str(exc))
            raise
        with self._lock:
            self.fixture.responses.setdefault(request.fingerprint(), text)
        return text
