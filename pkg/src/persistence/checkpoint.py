"""
Checkpoints: an ``.npz`` with every array plus a ``.json`` manifest.

The manifest records the format version, resolved config, network shape
manifests, optimizer scalars, trainer progress and the RNG position, so a
resumed run continues exactly where the saved one stopped.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from src import __version__
from src.engine.controls import ControlNet
from src.engine.params import FIELDS, HyperParams
from src.engine.sampler import ParamSet
from src.numerics.rng import ALGORITHM
from src.services.optimizer import OptimState
from src.utils.errors import CheckpointError

logger = logging.getLogger("checkpoint")

FORMAT_VERSION = 1
_SEP = "__"


@dataclass
class Checkpoint:
    params: ParamSet
    optim: OptimState
    trainer: dict
    config: dict
    code_version: str


def _paths(path: str | Path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".npz", ".json") else path
    return stem.with_suffix(".npz"), stem.with_suffix(".json")


def save_checkpoint(path: str | Path, params: ParamSet, optim: OptimState, trainer: dict, config: dict) -> Path:
    npz_path, json_path = _paths(path)
    npz_path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {}
    for name, value in params.hp.arrays().items():
        arrays[f"hp{_SEP}{name}"] = np.asarray(value)
    for name, net in params.nets.items():
        arrays[f"net{_SEP}{name}"] = net.flatten()
    for name, value in optim.m.items():
        arrays[f"m{_SEP}{name}"] = value
    for name, value in optim.v.items():
        arrays[f"v{_SEP}{name}"] = value
    np.savez(npz_path, **arrays)

    manifest = {
        "format_version": FORMAT_VERSION,
        "code_version": __version__,
        "config": config,
        "hp": {"learn_flags": params.hp.learn_flags, "schedule": params.hp.schedule},
        "nets": {name: net.shape_manifest() for name, net in params.nets.items()},
        "optim": optim.scalars(),
        "trainer": trainer,
        "rng": {"algorithm": ALGORITHM, "seed": config.get("train", {}).get("seed"),
                "next_stream": trainer.get("next_stream")},
    }
    json_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info("checkpoint written: %s (step %s)", npz_path, trainer.get("step"))
    return npz_path


def _check_shapes(params: ParamSet, expected: ParamSet):
    have, want = params.arrays(), expected.arrays()
    problems = []
    for name in sorted(set(have) | set(want)):
        if name not in have:
            problems.append(f"{name}: missing from checkpoint")
        elif name not in want:
            problems.append(f"{name}: not part of this configuration")
        elif np.shape(have[name]) != np.shape(want[name]):
            problems.append(f"{name}: shape {np.shape(have[name])}, expected {np.shape(want[name])}")
    if problems:
        raise CheckpointError("checkpoint does not match the configuration", problems)


def load_checkpoint(path: str | Path, expected: Optional[ParamSet] = None) -> Checkpoint:
    npz_path, json_path = _paths(path)
    if not npz_path.exists() or not json_path.exists():
        raise CheckpointError(f"checkpoint not found: {npz_path}", [f"expected {npz_path} and {json_path}"])
    try:
        manifest = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint manifest {json_path} is not valid JSON", [exc.msg]) from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError("unsupported checkpoint format",
                              [f"format_version: {version!r}, expected {FORMAT_VERSION}"])
    if manifest.get("rng", {}).get("algorithm") != ALGORITHM:
        raise CheckpointError("checkpoint was written with another RNG", [f"rng.algorithm: {manifest.get('rng')}"])

    with np.load(npz_path) as data:
        arrays = {key: data[key] for key in data.files}
    groups: Dict[str, Dict[str, np.ndarray]] = {"hp": {}, "net": {}, "m": {}, "v": {}}
    for key, value in arrays.items():
        group, _, name = key.partition(_SEP)
        if group not in groups:
            raise CheckpointError(f"unexpected array {key!r} in {npz_path}")
        groups[group][name] = value

    missing = [f for f in FIELDS if f not in groups["hp"]]
    if missing:
        raise CheckpointError(f"hyperparameters missing from {npz_path}", missing)
    hp_meta = manifest["hp"]
    hp = HyperParams(**groups["hp"], learn_flags=hp_meta["learn_flags"], schedule=hp_meta["schedule"])
    nets = {}
    for name, shapes in manifest["nets"].items():
        if name not in groups["net"]:
            raise CheckpointError(f"control {name!r} listed in manifest but missing from {npz_path}")
        nets[name] = ControlNet.unflatten(groups["net"][name], shapes)
    params = ParamSet(hp, nets)
    if expected is not None:
        _check_shapes(params, expected)
    optim = OptimState.from_scalars(manifest["optim"], groups["m"], groups["v"])
    return Checkpoint(params, optim, manifest["trainer"], manifest["config"], manifest.get("code_version", "unknown"))


__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]
