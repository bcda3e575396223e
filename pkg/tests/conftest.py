"""Shared builders: tiny corpora, extraction sets, a fake HTTP backend."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from sciatlas.corpus import Corpus, Publication
from sciatlas.extraction import AspectExtraction, ExtractionSet

MINI_DIR = Path(__file__).resolve().parent.parent / "src" / "sciatlas" / "data" / "mini"


def make_pub(i: int, title: str = "", abstract: str = "", venue: str = "Nature",
             year: int = 2020, community: str = "science") -> Publication:
    return Publication(id=f"pub-{i:05d}", title=title or f"Title {i}",
                       abstract=abstract or f"Abstract body {i}.",
                       venue=venue, year=year, community=community)


def make_ext(i: int, problem: str | None = None, method: str | None = None,
             discipline: str = "Biology", scientific: bool = True,
             ai: bool = True, usage: str | None = None) -> AspectExtraction:
    """AI4Science extraction by default; pass None aspects to degrade it."""
    return AspectExtraction(
        pub_id=f"pub-{i:05d}",
        problem_keyphrase=problem,
        problem_definition=f"definition of {problem}" if problem else None,
        problem_discipline=discipline if problem else None,
        method_keyphrase=method,
        method_definition=f"definition of {method}" if method else None,
        usage=usage or (f"{method} is applied to {problem}."
                        if problem and method else None),
        is_scientific=scientific and problem is not None,
        uses_ai=ai and method is not None,
    )


@pytest.fixture(scope="session")
def mini_corpus_dir() -> Path:
    assert (MINI_DIR / "corpus.jsonl").exists(), "bundled mini corpus missing"
    return MINI_DIR


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        request = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append((self.path, request,
                                     self.headers.get("Authorization")))
        status, payload = self.server.responder(self.path, request)
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class FakeBackend:
    """In-process HTTP endpoint; `responder(path, request) -> (status, json)`."""

    def __init__(self, responder):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self.server.responder = responder
        self.server.requests = []
        self.thread = threading.Thread(target=self.server.serve_forever,
                                       daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self.server.requests

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def fake_backend():
    backends = []

    def start(responder) -> FakeBackend:
        backend = FakeBackend(responder)
        backends.append(backend)
        return backend

    yield start
    for backend in backends:
        backend.close()
