"""
Gradient training of sampler parameters.

Step k draws trajectories ``k·batch .. k·batch + batch - 1`` from the training
streams, so a run is a pure function of (config, seed) in reproducible mode and
can be resumed from any checkpoint without replaying earlier steps.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import settings
from src.engine.estimation import kl_loss, lv_loss
from src.engine.methods import MethodSpec
from src.engine.sampler import ParamSet, init_params, simulate
from src.engine.targets import TargetDensity, build_target
from src.models.records import EvalRecord, TrainingEvent, TrainingResult
from src.models.run_config import RunConfig
from src.numerics import autodiff as ad
from src.persistence.checkpoint import load_checkpoint, save_checkpoint
from src.services.evaluation import Evaluator
from src.services.metrics import (
    diverged_batches_counter,
    gradient_steps_counter,
    skipped_updates_counter,
    step_latency,
)
from src.services.optimizer import OptimState, adam_update, grads_finite
from src.utils.errors import DivergedError, TrainingAborted

logger = logging.getLogger("trainer")

MAX_CONSECUTIVE_DIVERGED = 3
BEST_WINDOW = 5


def method_spec(config: RunConfig) -> MethodSpec:
    m = config.method
    return MethodSpec(kind=m.kind, regime=m.regime, integrator=m.integrator, drift=m.drift,
                      precondition=m.precondition, detach_beta=config.train.detach_beta,
                      proposal=config.train.proposal)


def initial_params(config: RunConfig, spec: MethodSpec, target: TargetDensity) -> ParamSet:
    return init_params(spec, target.dim, config.schedule.N, a=config.step_scale(),
                       sigma=config.schedule.sigma_init, learn_flags=config.learn.model_dump(),
                       schedule=config.schedule.schedule_kind, width=config.network.width,
                       seed=config.train.seed)


def best_record(records: List[EvalRecord], window: int = BEST_WINDOW) -> Optional[EvalRecord]:
    """Record at which the running mean of the last ``window`` finite lower bounds peaks."""
    best, best_avg, recent = None, -math.inf, []
    for rec in records:
        if rec.diverged or not math.isfinite(rec.logz_lb):
            continue
        recent = (recent + [rec.logz_lb])[-window:]
        avg = sum(recent) / len(recent)
        if avg > best_avg:
            best, best_avg = rec, avg
    return best


class Trainer:
    """Runs K Adam steps on the KL or log-variance loss with periodic evaluation."""

    def __init__(self, config: RunConfig, target: Optional[TargetDensity] = None,
                 checkpoint_dir: Optional[str | Path] = None, threads: Optional[int] = None):
        self.config = config
        self.target = target or build_target(config.target)
        self.spec = method_spec(config)
        self.params = initial_params(config, self.spec, self.target)
        tc = config.train
        self.optim = OptimState(base_lr=tc.lr, total_steps=tc.K, decay_start=tc.decay_start, clip=tc.clip)
        self.evaluator = Evaluator(self.spec, self.target, config.schedule.N, tc.seed,
                                   samples=config.eval.samples, sinkhorn=config.eval.sinkhorn,
                                   sinkhorn_samples=config.eval.sinkhorn_samples,
                                   reference_path=config.eval.reference_path)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.threads = max(1, threads if threads is not None else settings.BRIDGECRAFT_THREADS)
        self.step = 0
        self.consecutive_diverged = 0
        self.records: List[EvalRecord] = []
        self.events: List[TrainingEvent] = []
        self.last_loss = float("nan")
        logger.info("trainer ready: %s on %s (d=%d, N=%d, K=%d, batch=%d, loss=%s, %d network weights)",
                    self.spec.label, self.target.name, self.target.dim, config.schedule.N, tc.K, tc.batch,
                    tc.loss, self.params.network_parameter_count())

    # ------- checkpoints -------

    @classmethod
    def resume(cls, config: RunConfig, checkpoint_path: str | Path, **kwargs) -> "Trainer":
        trainer = cls(config, **kwargs)
        ckpt = load_checkpoint(checkpoint_path, expected=trainer.params)
        trainer.params = ckpt.params
        trainer.optim = ckpt.optim
        state = ckpt.trainer
        trainer.step = int(state["step"])
        trainer.consecutive_diverged = int(state.get("consecutive_diverged", 0))
        trainer.records = [EvalRecord.from_dict(r) for r in state.get("records", [])]
        trainer.events = [TrainingEvent(**e) for e in state.get("events", [])]
        logger.info("resumed from %s at step %d", checkpoint_path, trainer.step)
        return trainer

    def state_dict(self) -> dict:
        return {
            "step": self.step,
            "next_stream": self.step * self.config.train.batch,
            "consecutive_diverged": self.consecutive_diverged,
            "records": [r.to_dict() for r in self.records],
            "events": [e.to_dict() for e in self.events],
        }

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.params, self.optim, self.state_dict(),
                               self.config.model_dump(mode="json"))

    # ------- gradients -------

    def _chunk_gradient(self, first_stream: int, size: int, batch: int) -> Tuple[float, Dict[str, np.ndarray]]:
        tc = self.config.train
        tape = ad.Tape()
        bound, leaves = self.params.bind(tape)
        lv = tc.loss == "lv"
        try:
            sim = simulate(self.spec, self.target, bound, self.config.schedule.N, tc.seed, first_stream, size,
                           detach=lv)
        except DivergedError as exc:
            raise DivergedError(exc.step, [first_stream + i for i in exc.trajectories]) from exc
        if lv:
            loss = lv_loss(sim.rnd)
        elif size == batch:
            loss = kl_loss(sim.rnd)
        else:
            loss = ad.sum(sim.rnd) / float(batch)
        wanted = [leaves[name] for name in self.params.trainable_names() if name in leaves]
        if not wanted or not ad.is_node(loss):
            return float(ad.value(loss)), {}
        grads = ad.grad(tape, loss, wrt=wanted)
        return float(ad.value(loss)), {leaf.name: g for leaf, g in grads.items()}

    def batch_gradient(self, k: int) -> Tuple[float, Dict[str, np.ndarray]]:
        """Loss and gradients for step ``k``.

        In fast mode the KL batch is split across threads and the chunk gradients are
        summed as they finish, which changes floating-point summation order.
        """
        batch = self.config.train.batch
        first = k * batch
        fast = not self.config.reproducible and self.threads > 1 and self.config.train.loss == "kl"
        if not fast:
            return self._chunk_gradient(first, batch, batch)
        bounds = np.linspace(0, batch, min(self.threads, batch) + 1).astype(int)
        total, grads = 0.0, {}
        with ThreadPoolExecutor(max_workers=len(bounds) - 1) as pool:
            futures = [pool.submit(self._chunk_gradient, first + lo, hi - lo, batch)
                       for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            for fut in as_completed(futures):
                loss, g = fut.result()
                total += loss
                for name, value in g.items():
                    grads[name] = grads[name] + value if name in grads else value
        return total, grads

    # ------- loop -------

    def train_step(self, k: int) -> Optional[float]:
        """One update; returns the batch loss, or None when the batch was skipped."""
        try:
            loss, grads = self.batch_gradient(k)
        except DivergedError as exc:
            self.consecutive_diverged += 1
            diverged_batches_counter.inc()
            ids = exc.trajectories
            self.events.append(TrainingEvent(k, "diverged", f"step {exc.step}, trajectories {ids[:10]}"))
            logger.warning("batch %d diverged at integration step %d (%d trajectories)", k, exc.step, len(ids))
            if self.consecutive_diverged > MAX_CONSECUTIVE_DIVERGED:
                logger.error("aborting: %d consecutive diverged batches at step %d", self.consecutive_diverged, k)
                raise TrainingAborted(
                    f"{self.consecutive_diverged} consecutive diverged batches at step {k}", step=k) from exc
            if self.optim.halve_once():
                self.events.append(TrainingEvent(k, "lr_halved", f"scale={self.optim.lr_scale}"))
            return None
        self.consecutive_diverged = 0
        if not (math.isfinite(loss) and grads_finite(grads)):
            skipped_updates_counter.inc()
            self.events.append(TrainingEvent(k, "skipped_update", f"non-finite gradient (loss={loss})"))
            logger.warning("step %d: non-finite gradient, update skipped", k)
            return None
        values = self.params.arrays()
        updated = adam_update(self.optim, {name: values[name] for name in grads}, grads, step=k)
        self.params = self.params.with_arrays(updated)
        gradient_steps_counter.inc()
        return loss

    def _evaluate(self, k: int, started: float) -> EvalRecord:
        seconds = 0.0 if self.config.reproducible else time.perf_counter() - started
        outcome = self.evaluator.evaluate(self.params, step=k, loss=self.last_loss, seconds=seconds)
        if outcome.bound_violated:
            self.events.append(TrainingEvent(k, "bound_violation",
                                             f"lb={outcome.record.logz_lb} se={outcome.lb_stderr}"))
        self.records.append(outcome.record)
        return outcome.record

    def run(self) -> TrainingResult:
        tc = self.config.train
        every = self.config.eval_every()
        started = time.perf_counter()
        evals_since_checkpoint = 0
        while self.step < tc.K:
            k = self.step
            with step_latency.time():
                loss = self.train_step(k)
            if loss is not None:
                self.last_loss = loss
            self.step = k + 1
            if self.step % every == 0 or self.step == tc.K:
                self._evaluate(self.step, started)
                evals_since_checkpoint += 1
                if self.checkpoint_dir and evals_since_checkpoint >= settings.BRIDGECRAFT_CHECKPOINT_EVERY:
                    self.save(self.checkpoint_dir / "last")
                    evals_since_checkpoint = 0
        if self.checkpoint_dir and tc.K > 0:
            self.save(self.checkpoint_dir / "last")
        seconds = time.perf_counter() - started
        best = best_record(self.records)
        final = self.records[-1] if self.records else None
        logger.info("training finished after %d steps in %.1fs (best lb=%s)", tc.K, seconds,
                    None if best is None else round(best.logz_lb, 4))
        return TrainingResult(self.params, list(self.records), best, list(self.events), final, seconds)


def train(config: RunConfig, target: Optional[TargetDensity] = None,
          checkpoint_dir: Optional[str | Path] = None) -> TrainingResult:
    return Trainer(config, target=target, checkpoint_dir=checkpoint_dir).run()


__all__ = ["Trainer", "train", "method_spec", "initial_params", "best_record",
           "MAX_CONSECUTIVE_DIVERGED", "BEST_WINDOW"]
