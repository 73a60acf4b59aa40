#!/usr/bin/env python3
"""Read-only JSON API over run results under the output root (plot-ready data)."""

from __future__ import annotations

import hmac
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from flask import Flask, abort, jsonify, request
from waitress import serve

import run_store
from fda_core import load_matrix
from reconstruction import ReconstructionSummary
from settings import configure_logging, output_root, read_json

logger = logging.getLogger(__name__)

APP_VERSION = "1.0.0"
AUTH_REALM = "pcl-fpca"
OPEN_ENDPOINTS = {"health"}


def _run_path(root: Path, name: str) -> Path:
    """Resolve ``name`` under ``root``; anything outside it is a 404."""
    target = (root / name).resolve()
    try:
        target.relative_to(root.resolve())
    except ValueError:
        abort(404)
    if not target.is_dir():
        abort(404)
    return target


def _basic_credentials() -> Optional[Tuple[str, str]]:
    """``BASIC_AUTH=user:password`` from the environment; None disables the check."""
    raw = (os.getenv("BASIC_AUTH") or "").strip()
    if not raw:
        return None
    user, _, password = raw.partition(":")
    if not (user and password):
        logger.warning("BASIC_AUTH must be username:password; the results API is open")
        return None
    return user, password


def _matches(expected: Tuple[str, str]) -> bool:
    given = request.authorization
    if given is None or given.type != "basic":
        return False
    user_ok = hmac.compare_digest((given.username or "").encode(), expected[0].encode())
    password_ok = hmac.compare_digest((given.password or "").encode(), expected[1].encode())
    return user_ok and password_ok


def _read_or_404(path: Path) -> Any:
    if not path.exists():
        abort(404)
    return read_json(path)


def create_app(root: Optional[Path] = None) -> Flask:
    app = Flask(__name__)
    credentials = _basic_credentials()
    app.config["AUTH_ENABLED"] = credentials is not None
    results_root = Path(root) if root else output_root()

    configure_logging()
    logger.setLevel(logging.getLogger().level)

    @app.before_request
    def require_auth():
        if credentials is None or request.endpoint in OPEN_ENDPOINTS or request.endpoint is None:
            return None
        if _matches(credentials):
            return None
        logger.warning("Rejected %s %s: bad or missing credentials", request.method, request.path)
        response = jsonify({"success": False, "message": "Authentication required"})
        response.headers["WWW-Authenticate"] = f'Basic realm="{AUTH_REALM}"'
        return response, 401

    @app.errorhandler(404)
    def not_found(_exc):
        return jsonify({"success": False, "message": "Not found"}), 404

    @app.route("/health")
    def health():
        return {"status": "healthy", "timestamp": datetime.now().isoformat()}

    @app.route("/api/config")
    def api_config():
        return jsonify({"version": APP_VERSION, "output_root": str(results_root)})

    @app.route("/api/runs")
    def api_runs():
        try:
            limit = max(1, min(200, int(request.args.get("limit", 20))))
        except (TypeError, ValueError):
            limit = 20
        return jsonify({"success": True, "runs": run_store.get_history(limit, request.args.get("command"))})

    @app.route("/api/runs/<run_id>")
    def api_run(run_id: str):
        run = run_store.get(run_id)
        if not run:
            abort(404)
        return jsonify({"success": True, "run": run})

    @app.route("/api/results/<path:name>/manifest")
    def api_manifest(name: str):
        run_dir = _run_path(results_root, name)
        payload: Dict[str, Any] = {"draws": _read_or_404(run_dir / "draws" / "manifest.json")}
        if (run_dir / "config.json").exists():
            payload["config"] = read_json(run_dir / "config.json")
        return jsonify({"success": True, **payload})

    @app.route("/api/results/<path:name>/diagnostics")
    def api_diagnostics(name: str):
        run_dir = _run_path(results_root, name)
        return jsonify({"success": True, "diagnostics": _read_or_404(run_dir / "diagnostics" / "diagnostics.json")})

    @app.route("/api/results/<path:name>/ppm/<int:k>")
    def api_ppm(name: str, k: int):
        path = _run_path(results_root, name) / "diagnostics" / f"ppm_k{k}.csv"
        if not path.exists():
            abort(404)
        return jsonify({"success": True, "dimension": k, "ppm": load_matrix(path).tolist()})

    @app.route("/api/results/<path:name>/reconstruction")
    def api_reconstruction(name: str):
        run_dir = _run_path(results_root, name)
        try:
            summary = ReconstructionSummary.load(run_dir / "reconstruction")
        except FileNotFoundError:
            abort(404)
        rows = request.args.get("curves")
        index = slice(None)
        if rows:
            try:
                index = [int(x) - 1 for x in rows.split(",")]
            except ValueError:
                return jsonify({"success": False, "message": "curves must be comma-separated integers"}), 400
            if min(index) < 0 or max(index) >= summary.posterior_mean.shape[0]:
                return jsonify({"success": False, "message": "curve index out of range"}), 400
        return jsonify(
            {
                "success": True,
                "mean": np.asarray(summary.posterior_mean[index]).tolist(),
                "lower": np.asarray(summary.lower[index]).tolist(),
                "upper": np.asarray(summary.upper[index]).tolist(),
            }
        )

    @app.route("/api/results/<path:name>/metrics")
    def api_metrics(name: str):
        run_dir = _run_path(results_root, name)
        return jsonify({"success": True, "metrics": _read_or_404(run_dir / "metrics" / "metrics.json")})

    logger.info("Results API ready over %s", results_root)
    return app


def serve_results(port: int = 5005, host: str = "0.0.0.0", threads: int = 8) -> None:
    """Block serving the results API with waitress."""
    app = create_app()
    logger.info("Starting results API on http://%s:%s (auth %s)", host, port, "on" if app.config["AUTH_ENABLED"] else "off")
    serve(app, host=host, port=port, threads=threads)
