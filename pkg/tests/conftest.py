"""Shared fixtures: target handles, baseline coverage, a local HTTP stub."""

from __future__ import annotations

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest

from semfuzz.executor import execute
from semfuzz.testbed import get_target


@pytest.fixture(scope="session")
def miniq():
    return get_target("miniq")


@pytest.fixture(scope="session")
def chunky():
    return get_target("chunky")


@pytest.fixture(scope="session")
def dissect():
    return get_target("dissect")


@pytest.fixture(scope="session")
def mathbench():
    return get_target("mathbench")


def corpus_bytes(handle) -> list[bytes]:
    return [p.read_bytes() for p in sorted(Path(handle.seeds_dir).iterdir())]


def baseline_edges(handle) -> set[int]:
    covered: set[int] = set()
    for data in corpus_bytes(handle):
        record = execute(data, handle)
        covered |= set(np.nonzero(record.bitmap)[0].tolist())
    return covered


@pytest.fixture(scope="session")
def miniq_baseline(miniq) -> set[int]:
    return baseline_edges(miniq)


class _StubHandler(BaseHTTPRequestHandler):
    """Scriptable endpoint: the server instance carries the reply plan."""

    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        server = self.server
        server.requests.append((self.path, body))
        status, payload = server.script(self.path, body)
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class StubEndpoint:
    def __init__(self, script):
        self.server = HTTPServer(("127.0.0.1", 0), _StubHandler)
        self.server.requests = []
        self.server.script = script
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
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
def stub_endpoint():
    endpoints = []

    def make(script):
        ep = StubEndpoint(script)
        endpoints.append(ep)
        return ep

    yield make
    for ep in endpoints:
        ep.close()


def echo_candidates(*cands: bytes):
    """Script returning fixed generation candidates."""

    def script(path, body):
        return 200, {"candidates": [base64.b64encode(c).decode() for c in cands]}

    return script
