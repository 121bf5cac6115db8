"""
Run configuration models.

A RunConfig is plain JSON on disk; unknown keys are rejected and validation
errors are reported per field (``train.batch: Input should be greater than 1``).
"""
from __future__ import annotations

import hashlib
import itertools
import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.config import settings
from src.utils.errors import ConfigError

CONFIG_VERSION = 1


def resolve_dataset_path(path: str) -> Path:
    """Paths that do not exist as given are looked up in the bundled dataset directory."""
    candidate = Path(path)
    if candidate.exists() or candidate.is_absolute():
        return candidate
    bundled = Path(settings.BRIDGECRAFT_DATA_DIR) / candidate
    return bundled if bundled.exists() else candidate


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TargetConfig(_Strict):
    name: Literal["funnel", "manywell", "gmm", "gaussian", "logistic"] = "funnel"
    d: int = Field(10, ge=1)
    m: int = Field(3, ge=1)
    delta: float = Field(2.0, gt=0)
    means: Optional[List[List[float]]] = None
    weights: Optional[List[float]] = None
    var: float = Field(1.0, gt=0)
    dataset_path: Optional[str] = None
    prior_var: float = Field(100.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.name == "funnel" and self.d < 2:
            raise ValueError("funnel needs d >= 2")
        if self.name == "manywell" and self.m > self.d:
            raise ValueError(f"manywell needs m <= d (m={self.m}, d={self.d})")
        if self.name == "gmm" and self.means is not None and any(len(mu) != self.d for mu in self.means):
            raise ValueError("every gmm mean must have length d")
        if self.name == "logistic":
            if not self.dataset_path:
                raise ValueError("logistic target needs dataset_path")
            resolved = resolve_dataset_path(self.dataset_path)
            if not resolved.exists():
                raise ValueError(f"dataset file not found: {self.dataset_path}")
            self.dataset_path = str(resolved)
        return self


class MethodConfig(_Strict):
    kind: Literal["ULA", "MCD", "CMCD", "DIS", "DBS"] = "DBS"
    regime: Literal["overdamped", "underdamped"] = "underdamped"
    integrator: Literal["em", "obab", "baoab", "obabo"] = "obabo"
    drift: Literal["zero", "grad_log_prior", "grad_log_target", "grad_log_nu", "grad_log_nu_learned"] = "grad_log_nu_learned"
    precondition: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.regime == "overdamped" and self.integrator != "em":
            raise ValueError(f"integrator {self.integrator!r} needs the underdamped regime")
        if self.kind != "DBS" and self.drift != "grad_log_nu_learned":
            raise ValueError("drift choice only applies to DBS")
        return self


class ScheduleConfig(_Strict):
    N: int = Field(32, ge=1)
    schedule_kind: Literal["cosine", "uniform"] = "cosine"
    a_init: Optional[float] = Field(None, gt=0)
    sigma_init: float = Field(1.0, gt=0)


class LearnConfig(_Strict):
    sigma: bool = True
    M: bool = False
    T: bool = True
    prior: bool = True
    beta: bool = True


class TrainConfig(_Strict):
    K: int = Field(5000, ge=0)
    batch: int = Field(256, ge=2)
    lr: float = Field(5e-3, gt=0)
    clip: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0)
    loss: Literal["kl", "lv"] = "kl"
    decay_start: float = Field(3.0 / 7.0, ge=0, le=1)
    detach_beta: bool = False
    proposal: Literal["forward", "uncontrolled"] = "forward"

    @model_validator(mode="after")
    def _check(self):
        if self.proposal != "forward" and self.loss != "lv":
            raise ValueError("off-policy proposals need loss = 'lv'")
        return self


class EvalConfig(_Strict):
    every: Optional[int] = Field(None, ge=1)
    samples: int = Field(2000, ge=2)
    sinkhorn: bool = False
    sinkhorn_samples: int = Field(500, ge=1)
    reference_path: Optional[str] = None


class NetworkConfig(_Strict):
    width: int = Field(128, ge=1)


class OutputConfig(_Strict):
    dir: Optional[str] = None


class RunConfig(_Strict):
    version: int = CONFIG_VERSION
    target: TargetConfig = Field(default_factory=TargetConfig)
    method: MethodConfig = Field(default_factory=MethodConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    learn: LearnConfig = Field(default_factory=LearnConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    reproducible: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.version != CONFIG_VERSION:
            raise ValueError(f"config version {self.version} not supported (expected {CONFIG_VERSION})")
        return self

    def eval_every(self) -> int:
        return self.eval.every or max(1, self.train.K // 100)

    def step_scale(self) -> float:
        if self.schedule.a_init is not None:
            return self.schedule.a_init
        return 0.1 if self.target.name == "manywell" else 0.01


class CompareConfig(_Strict):
    base: RunConfig = Field(default_factory=RunConfig)
    methods: List[Literal["ULA", "MCD", "CMCD", "DIS", "DBS"]] = Field(default_factory=lambda: ["DBS"])
    regimes: List[Literal["overdamped", "underdamped"]] = Field(default_factory=lambda: ["underdamped"])
    integrators: List[Literal["em", "obab", "baoab", "obabo"]] = Field(default_factory=lambda: ["obabo"])
    N: List[int] = Field(default_factory=lambda: [32])
    seeds: List[int] = Field(default_factory=lambda: [0])

    def cells(self) -> List[RunConfig]:
        """Valid (method, regime, integrator, N, seed) combinations; overdamped cells only use EM."""
        out, seen = [], set()
        for kind, regime, integrator, n, seed in itertools.product(
                self.methods, self.regimes, self.integrators, self.N, self.seeds):
            if regime == "overdamped":
                integrator = "em"
            key = (kind, regime, integrator, n, seed)
            if key in seen:
                continue
            seen.add(key)
            payload = self.base.model_dump()
            payload["method"].update(kind=kind, regime=regime, integrator=integrator)
            if kind != "DBS":
                payload["method"]["drift"] = "grad_log_nu_learned"
            payload["schedule"]["N"] = n
            payload["train"]["seed"] = seed
            out.append(RunConfig.model_validate(payload))
        return out


def _field_messages(err: ValidationError) -> List[str]:
    msgs = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msgs.append(f"{loc}: {e['msg']}")
    return msgs


def parse_config(payload: dict, model=RunConfig):
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError("invalid configuration", _field_messages(exc)) from exc


def load_run_config(path: str | Path, model=RunConfig):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", [f"--config: no such file {path}"])
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON", [f"line {exc.lineno}: {exc.msg}"]) from exc
    return parse_config(payload, model)


def config_hash(cfg: BaseModel) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


__all__ = [
    "CONFIG_VERSION", "TargetConfig", "MethodConfig", "ScheduleConfig", "LearnConfig", "TrainConfig",
    "EvalConfig", "NetworkConfig", "OutputConfig", "RunConfig", "CompareConfig",
    "parse_config", "load_run_config", "config_hash", "resolve_dataset_path",
]
