"""Shared fixtures: bundled corpus paths and a scriptable local HTTP stub."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent.parent / "src" / "srd" / "data"
MOCK_DIR = DATA_DIR / "mock"
GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def mock_corpus():
    return {
        "prompts": MOCK_DIR / "prompts.txt",
        "script": MOCK_DIR / "script.json",
        "signals": MOCK_DIR / "signals.json",
    }


class StubHandler(BaseHTTPRequestHandler):
    """Pops canned (status, body) responses from the server's queue."""

    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        self.server.requests.append(json.loads(raw) if raw else {})
        if self.server.responses:
            status, body = self.server.responses.pop(0)
        else:
            status, body = 500, {"error": "stub exhausted"}
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):  # keep test output clean
        pass


class StubServer:
    def __init__(self):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
        self.httpd.responses = []
        self.httpd.requests = []
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def queue(self, *responses):
        """Each response is (status, body_dict) or just body_dict for 200."""
        for item in responses:
            if isinstance(item, tuple):
                self.httpd.responses.append(item)
            else:
                self.httpd.responses.append((200, item))

    @property
    def requests(self):
        return self.httpd.requests

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()


def chat_body(text: str, finish_reason: str = "stop", logprobs=None) -> dict:
    choice = {"message": {"role": "assistant", "content": text}, "finish_reason": finish_reason}
    if logprobs is not None:
        choice["logprobs"] = {"content": [{"logprob": v} for v in logprobs]}
    return {"choices": [choice]}
