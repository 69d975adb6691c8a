# src/riskgaze/app/runs.py

from pathlib import Path

from flask import Blueprint, current_app, jsonify, request

from ..core.config import config_from_dict
from ..core.errors import ConfigError, StageError
from .pipeline import run_pipeline
from .run_dir import read_json

bp = Blueprint("runs", __name__)


def _runs_dir() -> Path:
    if "RISKGAZE_RUNS_DIR" in current_app.config:
        return Path(current_app.config["RISKGAZE_RUNS_DIR"])
    return Path(config_from_dict({}).paths.runs_dir)


@bp.route("/runs", methods=["POST"])
def create_run():
    data = request.json or {}

    try:
        cfg = config_from_dict(data)
    except ConfigError as e:
        return jsonify({"error": str(e)}), 400
    if "RISKGAZE_RUNS_DIR" in current_app.config:
        cfg.paths.runs_dir = current_app.config["RISKGAZE_RUNS_DIR"]

    try:
        run = run_pipeline(cfg)
    except StageError as e:
        return jsonify({"error": str(e), "stage": e.stage}), 500

    # Return only light summary + metadata; the full run lives on disk
    summary = read_json(run.path("summary", "summary.json"))
    return jsonify({
        "run_id": run.run_id,
        "config_hash": run.config_hash,
        "seed": run.seed,
        "classification": {k: v for k, v in summary["classification"].items() if k != "best_of"},
        "n_segments": summary["n_segments"],
        "selected_features": summary["selection"]["final_set"],
    })


@bp.route("/runs/<run_id>", methods=["GET"])
def get_run(run_id: str):
    base = _runs_dir()
    path = base / run_id / "summary" / "summary.json"
    if "/" in run_id or ".." in run_id or not path.exists():
        return jsonify({"error": "unknown run"}), 404
    return jsonify({"run_id": run_id, **read_json(path)})
