# shepherd/settings.py
"""
Environment-driven defaults. `.env` is honoured through python-dotenv; the CLI
calls `load_env()` once at startup, library users may call it themselves.
"""
from __future__ import annotations

import os

from dotenv import load_dotenv

DEFAULT_RUN_LOG = "shepherd_runs.jsonl"
DEFAULT_BATCH = 512


def load_env() -> None:
    load_dotenv()


def run_log_path() -> str:
    return os.getenv("SHEPHERD_RUN_LOG", DEFAULT_RUN_LOG)


def default_workers() -> int:
    return _int_env("SHEPHERD_WORKERS", 1)


def batch_size() -> int:
    # Chunking must not depend on worker count, otherwise results could differ bitwise.
    return _int_env("SHEPHERD_BATCH", DEFAULT_BATCH)


def quiet() -> bool:
    return os.getenv("SHEPHERD_QUIET", "").strip().lower() in ("1", "true", "yes")


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default
