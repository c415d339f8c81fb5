"""OpenAI-compatible chat/embedding client with a content-addressed disk cache.

Every chat draw is keyed by ``sample_index`` so the ``m`` answers sampled
for one clarification are cached (and resumed) individually. Cache entries
live at ``<cache_root>/<first two hex chars>/<sha256>.json``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .errors import PermanentProviderError, ProviderTransportError, UsageError
from .kernels import as_embeddings

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.5
    sample_index: int = 0
    max_tokens: int = 256

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise UsageError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.sample_index < 0:
            raise UsageError("sample_index must be >= 0")
        if self.max_tokens < 1:
            raise UsageError("max_tokens must be >= 1")

    def cache_key(self) -> str:
        return content_key(
            "chat",
            model=self.model,
            system=self.system_prompt,
            user=self.user_prompt,
            temperature=self.temperature,
            sample_index=self.sample_index,
        )

    def payload(self) -> dict:
        # sample_index is deliberately absent: it only distinguishes cache entries
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": self.user_prompt})
        return {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def content_key(endpoint: str, **fields) -> str:
    blob = json.dumps({"endpoint": endpoint, **fields}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class DiskCache:
    """One JSON file per entry; writes go to a temp file and are renamed into place."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        p = self.path(key)
        try:
            with open(p, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("ignoring corrupt cache entry %s", p)
            return None

    def put(self, key: str, entry: dict) -> None:
        p = self.path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump({"key": key, **entry}, fh, ensure_ascii=False, indent=1, sort_keys=True)
            os.replace(tmp, p)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class TokenBucket:
    """Blocking token bucket; ``rate`` tokens per second, bursts up to ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None, *,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise UsageError("rate limit must be positive")
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(1.0, rate))
        self._tokens = self.capacity
        self._clock, self._sleep = clock, sleep
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


@dataclass(frozen=True)
class RetryPolicy:
    base_delay: float = 1.0
    factor: float = 2.0
    max_attempts: int = 5

    def delay(self, attempt: int) -> float:
        """Sleep before retrying after failed attempt number ``attempt`` (1-based)."""
        return self.base_delay * self.factor ** (attempt - 1)


class OpenAIClient:
    """Thin synchronous client for ``/chat/completions`` and ``/embeddings``.

    4xx responses (other than 408/409/429) fail immediately; 5xx, 429 and
    network timeouts are retried with exponential backoff.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        timeout: float = 60.0,
        retry: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 8,
        rate_limit: float | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(base_url=self.base_url, headers=headers, timeout=timeout, transport=transport)
        self.retry = retry
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._bucket = TokenBucket(rate_limit, sleep=sleep) if rate_limit else None

    def close(self) -> None:
        self._http.close()

    def post(self, path: str, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            if attempt > 1:
                self._sleep(self.retry.delay(attempt - 1))
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                with self._slots:
                    response = self._http.post(path, json=payload)
            except (httpx.TimeoutException, httpx.NetworkError) as exc:
                last = exc
                logger.info("%s attempt %d failed: %s", path, attempt, exc)
                continue
            status = response.status_code
            if status < 400:
                return response.json()
            if status >= 500 or status in RETRYABLE_STATUS:
                last = httpx.HTTPStatusError(f"HTTP {status}", request=response.request, response=response)
                logger.info("%s attempt %d got HTTP %d", path, attempt, status)
                continue
            raise PermanentProviderError(status, response.text)
        raise ProviderTransportError(f"{path}: giving up after {self.retry.max_attempts} attempts ({last})")

    def chat_completion(self, req: ChatRequest) -> tuple[str, dict]:
        data = self.post("/chat/completions", req.payload())
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderTransportError(f"malformed chat completion response: {exc}") from exc
        return text or "", dict(data.get("usage") or {})

    def embeddings(self, texts: Sequence[str], model: str) -> tuple[list[list[float]], dict]:
        data = self.post("/embeddings", {"model": model, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            vectors = [r["embedding"] for r in rows]
        except (KeyError, TypeError) as exc:
            raise ProviderTransportError(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != len(texts):
            raise ProviderTransportError(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        return vectors, dict(data.get("usage") or {})


class _KeyLocks:
    """Per-key locks so concurrent identical requests reach the provider once."""

    def __init__(self):
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def __call__(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())


class LLMGateway:
    """Cached access to chat and embedding endpoints.

    ``stats`` counts provider round-trips separately from cache hits, which is
    what resumability checks look at.
    """

    def __init__(self, client: OpenAIClient, cache: DiskCache | None = None, *,
                 embedding_client: OpenAIClient | None = None, embed_batch_size: int = 128):
        self.client = client
        self.embedding_client = embedding_client or client
        self.cache = cache
        self.embed_batch_size = embed_batch_size
        self.stats: Counter[str] = Counter()
        self._stats_lock = threading.Lock()
        self._locks = _KeyLocks()

    def _count(self, name: str, k: int = 1) -> None:
        with self._stats_lock:
            self.stats[name] += k

    @property
    def provider_calls(self) -> int:
        return self.stats["chat_calls"] + self.stats["embedding_calls"]

    def chat(self, req: ChatRequest) -> str:
        key = req.cache_key()
        with self._locks(key):
            if self.cache is not None:
                hit = self.cache.get(key)
                if hit is not None and "response_text" in hit:
                    self._count("chat_cache_hits")
                    return hit["response_text"]
            text, usage = self.client.chat_completion(req)
            self._count("chat_calls")
            if self.cache is not None:
                request = asdict(req)
                self.cache.put(key, {
                    "endpoint": "chat",
                    "request": request,
                    "response_text": text,
                    "created_at": datetime.now(timezone.utc).isoformat(),
                    "token_usage": usage,
                })
            return text

    def embed(self, texts: Sequence[str], model: str) -> np.ndarray:
        """Unit-norm embeddings, one row per input text, in input order."""
        texts = list(texts)
        if not texts:
            raise UsageError("embed() needs at least one text")
        self._count("embedding_lookups", len(texts))
        found: dict[str, list[float]] = {}
        missing: list[str] = []
        for text in dict.fromkeys(texts):
            entry = self.cache.get(content_key("embeddings", model=model, text=text)) if self.cache else None
            if entry is not None and "embedding" in entry:
                found[text] = entry["embedding"]
                self._count("embedding_cache_hits")
            else:
                missing.append(text)

        for start in range(0, len(missing), self.embed_batch_size):
            batch = missing[start:start + self.embed_batch_size]
            vectors, usage = self.embedding_client.embeddings(batch, model)
            self._count("embedding_calls")
            self._count("embedded_texts", len(batch))
            now = datetime.now(timezone.utc).isoformat()
            for text, vec in zip(batch, vectors):
                found[text] = vec
                if self.cache is not None:
                    self.cache.put(content_key("embeddings", model=model, text=text), {
                        "endpoint": "embeddings",
                        "request": {"model": model, "text": text},
                        "embedding": [float(v) for v in vec],
                        "created_at": now,
                        "token_usage": usage,
                    })
        return as_embeddings([found[t] for t in texts])

    def close(self) -> None:
        self.client.close()
        if self.embedding_client is not self.client:
            self.embedding_client.close()
