"""Shared test fixtures: a tiny JSON HTTP stub for remote-provider tests."""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest


class _StubHandler(BaseHTTPRequestHandler):
    routes = {}

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        handler = self.routes.get(self.path)
        if handler is None:
            self.send_response(404)
            self.end_headers()
            return
        status, payload = handler(body)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@contextmanager
def json_stub_server(routes):
    """Serve ``routes`` ({path: fn(body) -> (status, payload)}) on an
    ephemeral port; yields the base URL."""

    class Handler(_StubHandler):
        pass

    Handler.routes = routes
    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}"
    finally:
        server.shutdown()
        thread.join(timeout=5)


@pytest.fixture
def stub_server():
    return json_stub_server


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one [ACCEPT] line per shipping criterion, in file order."""
    rows = {}
    for bucket, ok in (("passed", True), ("failed", False), ("error", False)):
        for rep in terminalreporter.stats.get(bucket, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_accept_" not in nodeid:
                continue
            name = nodeid.rsplit("test_accept_", 1)[1].replace("_", "-")
            line = rep.location[1] or 0
            if name not in rows or not ok:
                rows[name] = (line, ok)
    if not rows:
        return
    terminalreporter.section("acceptance gate")
    for name, (_, ok) in sorted(rows.items(), key=lambda kv: kv[1][0]):
        terminalreporter.write_line(f"[ACCEPT] {name}: {'PASS' if ok else 'FAIL'}")
