"""Run reports and artifact emission.

Every command writes a ``report.json`` binding together the run id, the
resolved configuration (with its hash), a revision string, the metric
records produced, and the paths of all emitted artifacts.  A report is
only written after verifying that each referenced artifact exists, so a
report always describes a complete run.
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig


def revision_string() -> str:
    """Best-effort source revision (git commit) for provenance."""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return "unknown"


def metric_record(metric: str, value: float, seed: int, stderr: float | None = None, **params) -> dict:
    """Uniform schema for one measured quantity."""
    return {
        "metric": metric,
        "params": params,
        "value": float(value),
        "stderr": None if stderr is None else float(stderr),
        "seed": int(seed),
    }


@dataclass
class RunReport:
    """Provenance bundle for one command invocation."""

    run_id: str
    config_hash: str
    revision: str
    command: str
    metrics: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)

    def add_artifact(self, path) -> None:
        self.artifacts.append(str(path))

    def write(self, out_dir: Path, config: RunConfig) -> Path:
        missing = [p for p in self.artifacts if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"artifacts referenced but absent: {missing}")
        doc = {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "revision": self.revision,
            "command": self.command,
            "config": {k: _jsonable(v) for k, v in config.as_dict().items()},
            "metrics": self.metrics,
            "artifacts": self.artifacts,
        }
        path = out_dir / "report.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
        return path


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def new_report(command: str, config: RunConfig) -> RunReport:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    h = config.hash()
    return RunReport(
        run_id=f"{command}-{stamp}-{h[:6]}",
        config_hash=h,
        revision=revision_string(),
        command=command,
    )


def run_dir(config: RunConfig, report: RunReport, out_override: str | None = None) -> Path:
    root = out_override or os.environ.get("SPARSE_SCORE_OUT") or config["output.dir"]
    path = Path(root) / report.run_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_matrix_csv(path, header: list, rows) -> None:
    """RFC-4180-style CSV with a header row and plain decimal floats."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_matrix_csv(path) -> tuple[list, np.ndarray]:
    """Read back a numeric CSV written by :func:`write_matrix_csv`."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows)
