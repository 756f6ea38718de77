import socket
import threading
import time

import pytest
import uvicorn

from needle.api import create_app
from needle.service import NeedleService


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class LiveBackend:
    """A real uvicorn server over a NeedleService, for CLI/HTTP tests."""

    def __init__(self, data_dir, mode="fast"):
        self.service = NeedleService(data_dir=data_dir, mode=mode)
        self.service.start(reconcile_on_start=False)
        self.port = free_port()
        self.addr = f"127.0.0.1:{self.port}"
        config = uvicorn.Config(
            create_app(self.service), host="127.0.0.1", port=self.port,
            log_level="warning", log_config=None,
        )
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.thread.start()
        deadline = time.monotonic() + 15
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("backend did not start")
            time.sleep(0.02)

    def stop(self):
        self.server.should_exit = True
        self.thread.join(timeout=10)
        self.service.stop()


@pytest.fixture
def live_backend(tmp_path):
    backend = LiveBackend(tmp_path / "data")
    yield backend
    backend.stop()
