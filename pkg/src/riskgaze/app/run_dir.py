"""
Run directory persistence.

    <runs_dir>/<run_id>/
      signals/    quality.json, cohort.csv (per-level summary), channels.json
      features/   features.csv
      stats/      stat_report.csv, stat_summary.json
      selection/  selection.csv, selection.json, selected_features.csv
      models/     experiments.json, best_of.csv, experiments.csv
      summary/    config.json, summary.json, report.md, accuracy.png

Every JSON file carries a `meta` block and every CSV a leading
`# config_hash=... seed=...` line.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

from ..core.config import PipelineConfig, config_hash

logger = logging.getLogger(__name__)

SUBDIRS = ("signals", "features", "stats", "selection", "models", "summary")


def new_run_id() -> str:
    # UTC timestamp, filesystem-safe (no colons)
    return dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def read_table(path: str | Path) -> pd.DataFrame:
    """Read a CSV written by RunDir.write_csv (skips the meta line)."""
    return pd.read_csv(path, skiprows=_meta_lines(path))


def _meta_lines(path: str | Path) -> int:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    return 1 if first.startswith("# config_hash=") else 0


def read_json(path: str | Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class RunDir:
    def __init__(self, root: Path, config_hash: str, seed: int):
        self.root = Path(root)
        self.run_id = self.root.name
        self.config_hash = config_hash
        self.seed = seed

    @classmethod
    def create(cls, cfg: PipelineConfig, run_id: Optional[str] = None) -> "RunDir":
        base = Path(cfg.paths.runs_dir)
        base.mkdir(parents=True, exist_ok=True)

        run_id = run_id or new_run_id()
        root = base / run_id
        n = 1
        while root.exists():
            n += 1
            root = base / f"{run_id}-{n}"
        logger.info("run directory %s", root)
        return cls.at(root, cfg)

    @classmethod
    def at(cls, root: str | Path, cfg: PipelineConfig) -> "RunDir":
        """Use (or create) an explicit directory, as the single-stage subcommands do."""
        root = Path(root)
        for sub in SUBDIRS:
            (root / sub).mkdir(parents=True, exist_ok=True)
        return cls(root, config_hash(cfg), cfg.seed)

    @classmethod
    def open(cls, root: str | Path) -> "RunDir":
        root = Path(root)
        meta = read_json(root / "summary" / "config.json").get("meta", {})
        return cls(root, meta.get("config_hash", ""), int(meta.get("seed", 0)))

    @property
    def meta(self) -> Dict[str, Any]:
        return {"config_hash": self.config_hash, "seed": self.seed}

    def path(self, sub: str, name: str) -> Path:
        if sub not in SUBDIRS:
            raise ValueError(f"unknown run subdirectory {sub!r}")
        return self.root / sub / name

    def write_json(self, sub: str, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(sub, name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"meta": self.meta, **payload}, f, indent=2)
            f.write("\n")
        return path

    def write_csv(self, sub: str, name: str, df: pd.DataFrame) -> Path:
        path = self.path(sub, name)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"# config_hash={self.config_hash} seed={self.seed}\n")
            df.to_csv(f, index=False)
        return path

    def write_text(self, sub: str, name: str, text: str) -> Path:
        path = self.path(sub, name)
        path.write_text(text, encoding="utf-8")
        return path
