"""Durable history of CLI command runs (state, timing, outputs)."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from settings import output_root

logger = logging.getLogger(__name__)

FINISHED_STATES = {"completed", "failed", "abandoned"}
STORE_NAME = "pclfpca_runs.json"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def stale_after_seconds() -> float:
    try:
        return max(60.0, float(os.getenv("PCLFPCA_RUN_STALE_SECONDS", "86400")))
    except (TypeError, ValueError):
        return 86400.0


class RunStore:
    """Small thread-safe JSON store kept under the output root."""

    def __init__(self, path: Optional[str | os.PathLike] = None, history_limit: int = 200):
        if path:
            self.path = Path(path)
        else:
            self.path = output_root() / STORE_NAME
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.history_limit = max(10, int(history_limit))
        self._lock = threading.RLock()
        self._data: Dict[str, Any] = {"version": 1, "runs": []}

        with self._lock:
            self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        try:
            raw = json.loads(self.path.read_text(encoding="utf-8"))
            if isinstance(raw, dict):
                self._data = raw
                self._data.setdefault("version", 1)
                self._data.setdefault("runs", [])
        except (OSError, ValueError) as exc:
            logger.warning("Could not load run history: %s", exc)

    def _save(self) -> None:
        try:
            temp = self.path.with_suffix(".tmp")
            temp.write_text(json.dumps(self._data, indent=2), encoding="utf-8")
            temp.replace(self.path)
        except OSError as exc:
            logger.warning("Could not save run history: %s", exc)

    def _find(self, run_id: str) -> Optional[Dict[str, Any]]:
        for item in self._data.get("runs", []):
            if item.get("run_id") == run_id:
                return item
        return None

    def start(self, command: str, params: Dict[str, Any], output: Optional[str] = None) -> Dict[str, Any]:
        run = {
            "run_id": uuid.uuid4().hex,
            "command": command,
            "params": dict(params),
            "output": output,
            "state": "running",
            "message": f"Running {command}",
            "started_at": utc_now(),
            "updated_at": utc_now(),
            "finished_at": None,
            "elapsed_seconds": 0,
            "exit_code": None,
        }
        with self._lock:
            self._data["runs"] = [run] + self._data.get("runs", [])[: self.history_limit - 1]
            self._save()
        return dict(run)

    def update(self, run_id: str, **changes: Any) -> Optional[Dict[str, Any]]:
        with self._lock:
            current = self._find(run_id)
            if not current:
                return None
            current.update(changes)
            current["updated_at"] = utc_now()
            try:
                started = datetime.fromisoformat(current["started_at"]).timestamp()
                current["elapsed_seconds"] = max(0, int(time.time() - started))
            except (KeyError, TypeError, ValueError):
                pass
            if changes.get("state") in FINISHED_STATES:
                current["finished_at"] = current.get("finished_at") or utc_now()
            self._save()
            return dict(current)

    def _expire(self, run: Dict[str, Any]) -> None:
        if run.get("state") != "running":
            return
        try:
            updated = datetime.fromisoformat(run["updated_at"]).timestamp()
        except (KeyError, TypeError, ValueError):
            return
        if time.time() - updated > stale_after_seconds():
            run.update(
                {
                    "state": "abandoned",
                    "message": "Run never reported completion",
                    "finished_at": utc_now(),
                    "updated_at": utc_now(),
                }
            )
            self._save()

    def get(self, run_id: str) -> Optional[Dict[str, Any]]:
        with self._lock:
            run = self._find(run_id)
            if run:
                self._expire(run)
            return dict(run) if run else None

    def get_history(self, limit: int = 20, command: Optional[str] = None) -> List[Dict[str, Any]]:
        with self._lock:
            out = []
            for run in self._data.get("runs", []):
                if command and run.get("command") != command:
                    continue
                self._expire(run)
                out.append(dict(run))
                if len(out) >= limit:
                    break
            return out


_store: Optional[RunStore] = None
_store_lock = threading.Lock()


def _get_store() -> RunStore:
    global _store
    with _store_lock:
        if _store is None or _store.path != output_root() / STORE_NAME:
            _store = RunStore()
        return _store


def start(command: str, params: Dict[str, Any], output: Optional[str] = None) -> Dict[str, Any]:
    return _get_store().start(command, params, output)


def update(run_id: str, **changes: Any) -> Optional[Dict[str, Any]]:
    return _get_store().update(run_id, **changes)


def get(run_id: str) -> Optional[Dict[str, Any]]:
    return _get_store().get(run_id)


def get_history(limit: int = 20, command: Optional[str] = None) -> List[Dict[str, Any]]:
    return _get_store().get_history(limit, command)
