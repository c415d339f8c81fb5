from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import numpy as np
import pytest

from spectral_uncertainty.gateway import DiskCache, LLMGateway, OpenAIClient

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _ACCEPTANCE[marker] = outcome


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            item.user_properties.append(("acceptance", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE.items():
        terminalreporter.write_line(f"{outcome}  {name}")


def hashed_vector(text: str, dim: int = 8) -> list[float]:
    seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")
    return np.random.default_rng(seed).normal(size=dim).tolist()


class FakeProvider:
    """Scripted OpenAI-compatible endpoint recording every request it sees."""

    def __init__(self, chat=None, embed=None):
        self.chat_fn = chat or (lambda system, user, payload: "Answer: Paris")
        self.embed_fn = embed or hashed_vector
        self.chat_requests: list[dict] = []
        self.embedding_requests: list[dict] = []
        self._lock = threading.Lock()

    def handle(self, path: str, payload: dict):
        if path.endswith("/embeddings"):
            with self._lock:
                self.embedding_requests.append(payload)
            data = [{"index": i, "embedding": self.embed_fn(t)} for i, t in enumerate(payload["input"])]
            return 200, {"data": data, "usage": {"total_tokens": len(data)}}
        with self._lock:
            self.chat_requests.append(payload)
        messages = payload["messages"]
        system = next((m["content"] for m in messages if m["role"] == "system"), "")
        reply = self.chat_fn(system, messages[-1]["content"], payload)
        if isinstance(reply, tuple):
            return reply
        return 200, {"choices": [{"message": {"role": "assistant", "content": reply}}], "usage": {}}

    def transport(self) -> httpx.MockTransport:
        def handler(request):
            status, body = self.handle(request.url.path, json.loads(request.content))
            return httpx.Response(status, json=body)
        return httpx.MockTransport(handler)

    def gateway(self, cache_root=None, **client_kw) -> LLMGateway:
        client_kw.setdefault("sleep", lambda s: None)
        client = OpenAIClient("http://fake.test/v1", transport=self.transport(), **client_kw)
        return LLMGateway(client, DiskCache(cache_root) if cache_root else None)


@pytest.fixture
def fake_provider():
    return FakeProvider()


class LocalServer:
    """Serves any object with ``handle(path, payload) -> (status, body)`` over real HTTP."""

    def __init__(self, provider):
        outer = provider

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                status, body = outer.handle(self.path, json.loads(self.rfile.read(length) or b"{}"))
                blob = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def local_server():
    return LocalServer
