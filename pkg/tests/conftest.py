from __future__ import annotations

import socket
import threading
import time
from datetime import datetime, timedelta, timezone

import pytest
from fastapi.testclient import TestClient

from altar import docstore, service


class FakeClock:
    """Deterministic, manually advanced clock for service tests."""

    def __init__(self):
        self.current = datetime(2025, 1, 23, 12, 0, 0, tzinfo=timezone.utc)

    def __call__(self) -> datetime:
        return self.current

    def advance(self, seconds: float) -> None:
        self.current = self.current + timedelta(seconds=seconds)


@pytest.fixture
def store(tmp_path):
    s = docstore.DocStore.open(tmp_path / "db")
    yield s
    s.close()


@pytest.fixture
def clock():
    return FakeClock()


def make_app(tmp_path, clock, **overrides):
    config = service.ServiceConfig(
        data_dir=str(tmp_path / "data"), clock=clock, **overrides
    )
    return service.create_app(config)


@pytest.fixture
def app(tmp_path, clock):
    application = make_app(tmp_path, clock)
    yield application
    application.state.service.close()


@pytest.fixture
def client(app):
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture
def live_server(tmp_path):
    """Real uvicorn server in a thread, for CLI clients that use HTTP."""
    import uvicorn

    config = service.ServiceConfig(
        data_dir=str(tmp_path / "live-data"),
        large_file_threshold_bytes=1000,  # small so tests exercise blobs cheaply
    )
    application = service.create_app(config)
    port = free_port()
    server = uvicorn.Server(
        uvicorn.Config(application, host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)
