"""
Run artifacts: manifest, CSV tables and JSON summaries under one output directory.
"""
import csv
import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from src.config import RunConfig, settings

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def _plain(value):
    """JSON-safe python value; numpy scalars and arrays become floats and lists."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def dumps(data) -> str:
    return json.dumps(_plain(data), sort_keys=True, indent=2) + "\n"


class RunArtifacts:
    """Writer bound to one output directory; the manifest is written first."""

    def __init__(self, directory: str | Path, command: str, config: RunConfig | None = None, seed: int | None = None):
        self.directory = Path(directory)
        self.command = command
        self.config = config
        self.seed = settings.SEED if seed is None else seed
        self._started = None
        self.manifest: dict = {}

    @property
    def run_id(self) -> str:
        return self.config.content_hash()[:12] if self.config else "no-config"

    def start(self) -> dict:
        self.directory.mkdir(parents=True, exist_ok=True)
        self._started = time.perf_counter()
        self.manifest = {
            "command": self.command,
            "config": self.config.model_dump(mode="json") if self.config else None,
            "config_hash": self.config.content_hash() if self.config else None,
            "seed": self.seed,
            "settings": settings.model_dump(mode="json"),
            "started_at": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "status": "running",
        }
        self.write_json(MANIFEST, self.manifest)
        return self.manifest

    def finish(self, status: str, reason: str | None = None, **extra) -> dict:
        elapsed = time.perf_counter() - self._started if self._started is not None else 0.0
        self.manifest.update(status=status, abort_reason=reason, wall_clock_seconds=elapsed, **extra)
        self.write_json(MANIFEST, self.manifest)
        return self.manifest

    def write_json(self, name: str, data) -> Path:
        path = self.directory / name
        path.write_text(dumps(data), encoding="utf-8")
        return path

    def write_csv(self, name: str, rows: list[dict], columns: list[str] | None = None) -> Path:
        path = self.directory / name
        columns = columns or (list(rows[0]) if rows else [])
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(row.get(c, "")) for c in columns])
        logger.debug(f"wrote {len(rows)} rows to {path}")
        return path


def snapshot_rows(state) -> list[dict]:
    """Per-cell columns x, v1.., F11.., tau1.. of a slab state."""
    rows = []
    tau = getattr(state, "tau", None)
    for j, x in enumerate(state.grid.centers.tolist()):
        row = {"x": x}
        for i in range(state.dim):
            row[f"v{i + 1}"] = float(state.v[j, i])
        for i in range(state.dim):
            row[f"F{i + 1}1"] = float(state.f1[j, i])
        if tau is not None:
            for a in range(tau.shape[-1]):
                row[f"tau{a + 1}"] = float(tau[j, a])
        rows.append(row)
    return rows
