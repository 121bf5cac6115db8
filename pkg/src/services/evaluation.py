"""
Periodic evaluation of a sampler: ESS, log Z bounds and an optional Sinkhorn
distance to reference samples.

Evaluation never builds a tape and always draws from the dedicated evaluation
streams, so two evaluations of the same parameters are identical.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src.engine.estimation import delta_log_z, ess, lb_standard_error, logz_bounds
from src.engine.methods import MethodSpec
from src.engine.params import terminal_time
from src.engine.sampler import ParamSet, simulate
from src.engine.sinkhorn import sinkhorn_distance
from src.engine.targets import TargetDensity
from src.models.records import EvalRecord
from src.numerics import autodiff as ad
from src.numerics.rng import RngStream
from src.services.metrics import bound_violations_counter, evaluations_counter
from src.utils.errors import ConfigError, DivergedError, UsageError

logger = logging.getLogger("evaluation")

EVAL_STREAM = 1 << 48
REFERENCE_STREAM = 1 << 52
BOUND_SIGMAS = 3.0


@dataclass
class EvalOutcome:
    record: EvalRecord
    rnd: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    lb_stderr: float = float("nan")
    delta_log_z: Optional[float] = None
    bound_violated: bool = False


def load_reference_samples(path: str | Path, dim: int) -> np.ndarray:
    """Reference draws from a ``.npy`` array or a CSV with one column per coordinate."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"reference samples not found: {path}", [f"eval.reference_path: no such file {path}"])
    if path.suffix == ".npy":
        values = np.load(path)
    else:
        values = pd.read_csv(path).to_numpy(dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != dim:
        raise ConfigError(f"reference samples in {path} have shape {values.shape}, expected (n, {dim})",
                          [f"eval.reference_path: expected {dim} columns"])
    return values


@dataclass
class Evaluator:
    spec: MethodSpec
    target: TargetDensity
    n_steps: int
    seed: int
    samples: int = 2000
    sinkhorn: bool = False
    sinkhorn_samples: int = 500
    reference_path: Optional[str] = None
    _reference: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def reference_samples(self) -> Optional[np.ndarray]:
        if self._reference is not None:
            return self._reference
        if self.reference_path:
            self._reference = load_reference_samples(self.reference_path, self.target.dim)
        else:
            try:
                self._reference = self.target.sample(RngStream(self.seed, REFERENCE_STREAM), self.sinkhorn_samples)
            except UsageError:
                logger.warning("%s has no exact sampler and no reference file; sinkhorn skipped", self.target.name)
                return None
        return self._reference

    def evaluate(self, params: ParamSet, step: int = 0, loss: float = float("nan"),
                 seconds: float = 0.0) -> EvalOutcome:
        evaluations_counter.inc()
        try:
            sim = simulate(self.spec, self.target, params, self.n_steps, self.seed, EVAL_STREAM, self.samples)
        except DivergedError as exc:
            logger.warning("evaluation at step %d diverged: %s", step, exc)
            nan = float("nan")
            return EvalOutcome(EvalRecord(step, loss, nan, nan, nan, None, True, seconds))

        r = np.asarray(ad.value(sim.rnd), dtype=np.float64)
        x_final = np.asarray(ad.value(sim.trajectory.final.x), dtype=np.float64)
        lb, iw = logz_bounds(r)
        record = EvalRecord(step=step, loss=float(loss), ess=ess(r), logz_lb=lb, logz_iw=iw,
                            sinkhorn=None, diverged=False, seconds=seconds)
        if self.sinkhorn:
            ref = self.reference_samples()
            if ref is not None:
                k = min(self.sinkhorn_samples, len(x_final))
                record.sinkhorn = sinkhorn_distance(x_final[:k], ref[: self.sinkhorn_samples]).distance

        se = lb_standard_error(r)
        outcome = EvalOutcome(record, r, x_final, se, delta_log_z(iw, self.target.true_log_z))
        truth = self.target.true_log_z
        if truth is not None and math.isfinite(lb) and lb > truth + BOUND_SIGMAS * se:
            outcome.bound_violated = True
            bound_violations_counter.inc()
            logger.warning("log Z lower bound %.4f exceeds reference %.4f by more than %.0f standard errors (se=%.3g)",
                           lb, truth, BOUND_SIGMAS, se)
        hp = params.hp
        logger.info("eval step=%d ess=%.4f lb=%.4f iw=%.4f sinkhorn=%s T=%.4f sigma=%.4f prior_var=%.4f",
                    step, record.ess, lb, iw, record.sinkhorn, terminal_time(hp, self.n_steps),
                    float(np.mean(ad.value(hp.sigma))), float(np.mean(ad.value(hp.prior_var))))
        return outcome


__all__ = ["Evaluator", "EvalOutcome", "load_reference_samples", "EVAL_STREAM", "REFERENCE_STREAM", "BOUND_SIGMAS"]
