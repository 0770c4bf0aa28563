from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

import pytest

from conceptgrader.dataset import load_dataset
from conceptgrader.fixtures import generate_fixture

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("fixture")
    generate_fixture(root, seed=0)
    return root


@pytest.fixture(scope="session")
def fixture_ds(fixture_root):
    return load_dataset(fixture_root)


@pytest.fixture(scope="session")
def scale_ds(tmp_path_factory):
    """Ten students, generated to exactly 895 triplets."""
    root = tmp_path_factory.mktemp("scale")
    generate_fixture(root, seed=1, n_students=10, n_triplets=895)
    return load_dataset(root)


class StubServer:
    """Chat-completions stub.  ``responder(body) -> (status, content)``."""

    def __init__(self, responder: Callable[[dict], tuple[int, str]]):
        self.responder = responder
        self.calls = 0
        self.bodies: list[dict] = []
        self.headers: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub._lock:
                    stub.calls += 1
                    stub.bodies.append(body)
                    stub.headers.append(dict(self.headers))
                status, content = stub.responder(body)
                payload = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": content}}]}
                ).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self) -> StubServer:
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def make(responder):
        s = StubServer(responder).__enter__()
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.__exit__()


# -- acceptance criterion summary ------------------------------------------------

_criteria: dict[str, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.setdefault(marker, []).append((report.nodeid.split("::")[-1], report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria):
        failed = [name for name, outcome in _criteria[cid] if outcome != "passed"]
        status = "FAIL" if failed else "PASS"
        n = len(_criteria[cid])
        detail = f" ({', '.join(failed)})" if failed else f" ({n} check{'s' if n != 1 else ''})"
        terminalreporter.write_line(f"{cid} {status}{detail}")
