"""Runnable backend: `python -m needle.server [--addr host:port]`.

Builds a NeedleService from the environment, serves the /v1 API, and
logs to <data>/logs/backend.log (plus stderr). `needlectl service
start` launches this module as a child process.
"""

from __future__ import annotations

import argparse
import logging
import sys

import uvicorn

from . import config
from .api import create_app
from .service import NeedleService


def setup_logging(data_dir) -> None:
    log_dir = data_dir / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    handlers = [
        logging.FileHandler(log_dir / "backend.log"),
        logging.StreamHandler(sys.stderr),
    ]
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        handlers=handlers,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="needle backend")
    parser.add_argument("--addr", default=None, help="host:port (default NEEDLE_API_ADDR)")
    args = parser.parse_args(argv)

    service = NeedleService()
    setup_logging(service.data_dir)
    service.start()
    app = create_app(service)
    host, port = config.split_addr(args.addr or config.api_addr())
    try:
        uvicorn.run(app, host=host, port=port, log_config=None)
    finally:
        service.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
