"""Runtime configuration: data root, service address, tuning knobs, modes.

Everything is resolved from environment variables with documented
defaults so a bare `needlectl service start` works out of the box.

Env vars:
    NEEDLE_DATA_DIR          root for catalog db, vector files, configs
                             (default ~/.needle/data)
    NEEDLE_API_ADDR          backend listen address (default 127.0.0.1:8461)
    NEEDLE_WORKERS           indexing worker threads (default 4)
    NEEDLE_BATCH_SIZE        images per embedding batch (default 50)
    NEEDLE_RECONCILE_MINUTES minutes between consistency passes (default 10)
    NEEDLE_MODE              deployment profile: fast | balanced | accurate
"""

from __future__ import annotations

import os
from pathlib import Path

DEFAULT_API_ADDR = "127.0.0.1:8461"
DEFAULT_WORKERS = 4
DEFAULT_BATCH_SIZE = 50
DEFAULT_RECONCILE_MINUTES = 10

# Deployment profiles fixed at install time. A profile picks the enabled
# embedder set, the guide-image count m, and the generation resolution;
# `k` is the per-source search depth feeding fusion.
MODES = {
    "fast": {
        "embedders": ["colorhist64", "grid64"],
        "m": 1,
        "resolution": "MEDIUM",
        "k": 100,
    },
    "balanced": {
        "embedders": ["colorhist64", "grid64", "edge36"],
        "m": 2,
        "resolution": "MEDIUM",
        "k": 100,
    },
    "accurate": {
        "embedders": ["colorhist64", "grid64", "edge36"],
        "m": 2,
        "resolution": "LARGE",
        "k": 200,
    },
}
DEFAULT_MODE = "fast"


def data_dir() -> Path:
    raw = os.environ.get("NEEDLE_DATA_DIR")
    if raw:
        return Path(raw).expanduser()
    return Path.home() / ".needle" / "data"


def api_addr() -> str:
    return os.environ.get("NEEDLE_API_ADDR", DEFAULT_API_ADDR)


def _int_env(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    return value if value > 0 else default


def workers() -> int:
    return _int_env("NEEDLE_WORKERS", DEFAULT_WORKERS)


def batch_size() -> int:
    return _int_env("NEEDLE_BATCH_SIZE", DEFAULT_BATCH_SIZE)


def reconcile_minutes() -> int:
    return _int_env("NEEDLE_RECONCILE_MINUTES", DEFAULT_RECONCILE_MINUTES)


def mode() -> str:
    raw = os.environ.get("NEEDLE_MODE", DEFAULT_MODE).lower()
    return raw if raw in MODES else DEFAULT_MODE


def split_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)
