"""Environment-driven settings, logging set-up and hashing helpers."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional

logger = logging.getLogger(__name__)

TRACE_LEVEL = 5
logging.addLevelName(TRACE_LEVEL, "TRACE")

DEFAULT_THREADS_CAP = 8
MAX_THREADS = 64


def configure_logging() -> None:
    level_name = (os.getenv("LOG_LEVEL") or "INFO").strip().upper()
    level = TRACE_LEVEL if level_name == "TRACE" else getattr(logging, level_name, logging.INFO)
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(
            level=level,
            format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
            datefmt="%Y-%m-%dT%H:%M:%S",
            stream=sys.stderr,
        )
    root.setLevel(level)
    logging.getLogger("werkzeug").setLevel(logging.WARNING if level <= logging.INFO else level)


def output_root() -> Path:
    """Base directory for relative output paths."""
    raw = (os.getenv("PCLFPCA_OUTPUT_ROOT") or "").strip()
    if raw:
        return Path(raw)
    return Path("/app/output" if os.path.exists("/app") else "./output")


def resolve_output(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


def _default_threads() -> int:
    return max(1, min(DEFAULT_THREADS_CAP, os.cpu_count() or 1))


def threads_from_env() -> int:
    try:
        n = int(os.getenv("PCLFPCA_THREADS", str(_default_threads())))
    except (TypeError, ValueError):
        n = _default_threads()
    return max(1, min(MAX_THREADS, n))


def clamp_threads(value: Any) -> int:
    if value is None:
        return threads_from_env()
    try:
        n = int(value)
    except (TypeError, ValueError):
        return threads_from_env()
    return max(1, min(MAX_THREADS, n))


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=True)


def git_blob_hash(text: str) -> str:
    """Hash ``text`` the way ``git hash-object`` hashes a blob."""
    data = text.encode("utf-8")
    header = f"blob {len(data)}\0".encode("utf-8")
    return hashlib.sha1(header + data).hexdigest()


def write_json(path: Path, payload: Any, indent: Optional[int] = 2) -> None:
    """Atomic JSON write (temp file then replace)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    temp = path.with_suffix(path.suffix + ".tmp")
    temp.write_text(json.dumps(payload, indent=indent), encoding="utf-8")
    temp.replace(path)


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
