"""
Run directory layout::

    <out>/manifest.json        resolved config, seed, config hash, code version
    <out>/metrics.csv          one row per evaluation
    <out>/final_summary.json   best / final records, reference log Z, events
    <out>/checkpoints/         training checkpoints
"""
from __future__ import annotations

import json
import logging
import math
import platform
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from src import __version__
from src.models.records import METRIC_COLUMNS, EvalRecord
from src.models.run_config import config_hash
from src.numerics.rng import ALGORITHM

logger = logging.getLogger("run_store")


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return _json_safe(value.item())
    return value


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True), encoding="utf-8")
    return path


def metrics_frame(records: Iterable[EvalRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in records], columns=METRIC_COLUMNS)


def write_metrics(path: Path, records: Iterable[EvalRecord]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics_frame(records).to_csv(path, index=False, float_format="%.17g")
    return path


def read_metrics(path: str | Path) -> List[EvalRecord]:
    frame = pd.read_csv(path)
    missing = [c for c in METRIC_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing metric columns {missing}")
    out = []
    for row in frame.to_dict(orient="records"):
        sinkhorn = row["sinkhorn"]
        out.append(EvalRecord(
            step=int(row["step"]), loss=float(row["loss"]), ess=float(row["ess"]),
            logz_lb=float(row["logz_lb"]), logz_iw=float(row["logz_iw"]),
            sinkhorn=None if pd.isna(sinkhorn) else float(sinkhorn),
            diverged=str(row["diverged"]).lower() == "true", seconds=float(row["seconds"]),
        ))
    return out


class RunStore:
    """Owns one output directory."""

    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def metrics_path(self) -> Path:
        return self.root / "metrics.csv"

    @property
    def checkpoint_dir(self) -> Path:
        return self.root / "checkpoints"

    def write_manifest(self, config, extra: Optional[dict] = None) -> Path:
        payload = {
            "config": config.model_dump(mode="json"),
            "config_hash": config_hash(config),
            "seed": getattr(getattr(config, "train", None), "seed", None),
            "code_version": __version__,
            "rng_algorithm": ALGORITHM,
            "python": platform.python_version(),
            "numpy": np.__version__,
        }
        payload.update(extra or {})
        return write_json(self.root / "manifest.json", payload)

    def write_metrics(self, records: Iterable[EvalRecord]) -> Path:
        path = write_metrics(self.metrics_path, records)
        logger.info("metrics written: %s", path)
        return path

    def write_summary(self, payload: dict, name: str = "final_summary.json") -> Path:
        return write_json(self.root / name, payload)


__all__ = ["RunStore", "write_json", "write_metrics", "read_metrics", "metrics_frame"]
