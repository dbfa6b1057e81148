import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from samplecache.harness import seed_game_cache

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "game_cache"


@pytest.fixture
def game_cache(tmp_path):
    """A freshly seeded demo guessing-game cache."""
    cache = tmp_path / "game_cache"
    seed_game_cache(cache)
    return cache


def completion_body(texts, prompt_tokens=7, completion_tokens=11):
    return {
        "choices": [{"message": {"content": t}} for t in texts],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append(body)
        if self.server.plan:
            step = self.server.plan.pop(0)
        else:
            step = self.server.responder(body)
        status, payload = step
        raw = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


def _default_responder(body):
    n = body.get("n", 1)
    return 200, completion_body([f"stub-{i}" for i in range(n)])


@pytest.fixture
def stub_server():
    """Local chat-completions stub.

    ``server.plan`` is a list of (status, payload) steps consumed one per
    request; once empty, ``server.responder`` answers from the request body.
    Requests are recorded on ``server.requests``.
    """
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.requests = []
    server.plan = []
    server.responder = _default_responder
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.base_url = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()
