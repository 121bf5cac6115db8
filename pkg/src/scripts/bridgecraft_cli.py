"""Command-line entry point.

Verbs:
  train    train one sampler from a RunConfig and write a run directory
  eval     re-evaluate a checkpoint (ESS, log Z bounds, optional Sinkhorn)
  compare  train a matrix of methods / regimes / integrators / N / seeds
  plot     render ess_vs_N.svg from a compare directory

Exit codes: 0 success, 2 configuration or usage error, 3 numerical abort.

Examples:
  python -m src.scripts.bridgecraft_cli train --config runs/funnel.json --out runs/funnel
  python -m src.scripts.bridgecraft_cli eval --checkpoint runs/funnel/checkpoints/last --samples 2000
  python -m src.scripts.bridgecraft_cli compare --config runs/matrix.json --out runs/matrix
  python -m src.scripts.bridgecraft_cli plot --out runs/matrix
"""
from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import pandas as pd

from src.config import settings
from src.engine.params import terminal_time
from src.engine.targets import build_target
from src.models.run_config import CompareConfig, RunConfig, config_hash, load_run_config, parse_config
from src.persistence.checkpoint import load_checkpoint
from src.persistence.run_store import RunStore, write_json
from src.services.evaluation import Evaluator
from src.services.training import Trainer, initial_params, method_spec
from src.utils.errors import BridgecraftError, ConfigError, TrainingAborted, UsageError
from src.utils.logging_config import configure_logging

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CELL_KEYS = ["kind", "regime", "integrator", "N"]


def _parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="bridgecraft", description="Diffusion bridge samplers: train, evaluate, compare")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required: bool = True):
        sp.add_argument("--config", required=config_required, help="JSON config path")
        sp.add_argument("--out", help="Output directory (default: config output.dir or BRIDGECRAFT_OUTPUT_DIR/<hash>)")
        sp.add_argument("--seed", type=int, help="Override train.seed")
        sp.add_argument("--reproducible", type=_parse_bool, help="true: bitwise-reproducible; false: fast threaded mode")

    t = sub.add_parser("train", help="Train one sampler")
    common(t)
    t.add_argument("--resume", help="Checkpoint to continue from")

    e = sub.add_parser("eval", help="Evaluate a checkpoint")
    common(e, config_required=False)
    e.add_argument("--checkpoint", required=True, help="Checkpoint path (.npz/.json stem)")
    e.add_argument("--samples", type=int, help="Number of evaluation trajectories (default eval.samples)")
    e.add_argument("--reference", help="Reference samples (.csv or .npy) for the Sinkhorn distance")

    c = sub.add_parser("compare", help="Train a comparison matrix")
    common(c)

    pl = sub.add_parser("plot", help="Render ess_vs_N.svg from compare output")
    pl.add_argument("--out", required=True, help="Compare output directory")
    pl.add_argument("--input", help="Plot-data CSV (default <out>/ess_vs_N.csv)")
    return p.parse_args(argv)


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    payload = config.model_dump()
    if "reproducible" not in config.model_fields_set:
        payload["reproducible"] = settings.BRIDGECRAFT_REPRODUCIBLE
    if getattr(args, "seed", None) is not None:
        payload["train"]["seed"] = args.seed
    if getattr(args, "reproducible", None) is not None:
        payload["reproducible"] = args.reproducible
    return parse_config(payload)


def _out_dir(args: argparse.Namespace, config: RunConfig, prefix: str) -> Path:
    if args.out:
        return Path(args.out)
    if config.output.dir:
        return Path(config.output.dir)
    return Path(settings.BRIDGECRAFT_OUTPUT_DIR) / f"{prefix}-{config_hash(config)[:12]}"


# ------- train -------

def _summary(trainer: Trainer, result, aborted: Optional[str] = None) -> dict:
    target = trainer.target
    final = result.final if result is not None else (trainer.records[-1] if trainer.records else None)
    best = result.best if result is not None else None
    truth = target.true_log_z
    return {
        "method": trainer.spec.label,
        "target": target.describe(),
        "steps": trainer.step,
        "terminal_time": terminal_time(trainer.params.hp, trainer.config.schedule.N),
        "best": None if best is None else best.to_dict(),
        "final": None if final is None else final.to_dict(),
        "delta_log_z": None if (final is None or truth is None or final.diverged) else abs(final.logz_iw - truth),
        "seconds": None if result is None else result.seconds,
        "counters": dict(Counter(e.kind for e in trainer.events)),
        "events": [e.to_dict() for e in trainer.events],
        "aborted": aborted,
    }


def cmd_train(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_run_config(args.config), args)
    target = build_target(config.target)
    store = RunStore(_out_dir(args, config, "train"))
    store.write_manifest(config)
    if args.resume:
        trainer = Trainer.resume(config, args.resume, target=target, checkpoint_dir=store.checkpoint_dir)
    else:
        trainer = Trainer(config, target=target, checkpoint_dir=store.checkpoint_dir)
    try:
        result = trainer.run()
    except TrainingAborted as exc:
        store.write_metrics(trainer.records)
        store.write_summary(_summary(trainer, None, aborted=str(exc)))
        raise
    store.write_metrics(result.records)
    store.write_summary(_summary(trainer, result))
    logger.info("run written to %s", store.root)
    return EXIT_OK


# ------- eval -------

def cmd_eval(args: argparse.Namespace) -> int:
    if args.samples is not None and args.samples < 2:
        raise UsageError(f"--samples must be >= 2, got {args.samples}")
    ckpt = load_checkpoint(args.checkpoint)
    config = load_run_config(args.config) if args.config else parse_config(ckpt.config)
    config = _apply_overrides(config, args)
    target = build_target(config.target)
    spec = method_spec(config)
    # reload with a shape check against a fresh initialization of the same configuration
    ckpt = load_checkpoint(args.checkpoint, expected=initial_params(config, spec, target))
    evaluator = Evaluator(spec, target, config.schedule.N, config.train.seed,
                          samples=args.samples or config.eval.samples,
                          sinkhorn=bool(args.reference) or config.eval.sinkhorn,
                          sinkhorn_samples=config.eval.sinkhorn_samples,
                          reference_path=args.reference or config.eval.reference_path)
    outcome = evaluator.evaluate(ckpt.params, step=int(ckpt.trainer.get("step", 0)))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    payload = {
        **outcome.record.to_dict(),
        "lb_stderr": outcome.lb_stderr,
        "delta_log_z": outcome.delta_log_z,
        "true_log_z": target.true_log_z,
        "bound_violated": outcome.bound_violated,
        "samples": evaluator.samples,
        "seed": config.train.seed,
        "method": spec.label,
    }
    path = write_json(out / "eval_metrics.json", payload)
    logger.info("eval metrics written to %s", path)
    return EXIT_OK


# ------- compare -------

def run_cell(payload: dict, out_dir: str) -> dict:
    """Train one matrix cell; numerical failures become a ``diverged`` row."""
    configure_logging()
    config = RunConfig.model_validate(payload)
    m = config.method
    row = {"kind": m.kind, "regime": m.regime, "integrator": m.integrator, "N": config.schedule.N,
           "seed": config.train.seed, "ess": None, "logz_lb": None, "logz_iw": None,
           "delta_log_z": None, "diverged": False}
    cell_dir = Path(out_dir) / "cells" / f"{m.kind}-{m.regime}-{m.integrator}-N{config.schedule.N}-s{config.train.seed}"
    store = RunStore(cell_dir)
    store.write_manifest(config)
    trainer = None
    try:
        trainer = Trainer(config)
        result = trainer.run()
    except BridgecraftError as exc:
        logger.warning("cell %s failed (%s): %s", cell_dir.name, type(exc).__name__, exc)
        if trainer is not None:
            store.write_metrics(trainer.records)
            store.write_summary(_summary(trainer, None, aborted=f"{type(exc).__name__}: {exc}"))
        row["diverged"] = True
        return row
    store.write_metrics(result.records)
    store.write_summary(_summary(trainer, result))
    rec = result.best or result.final
    if rec is None:
        return row
    if rec.diverged:
        row["diverged"] = True
        return row
    truth = trainer.target.true_log_z
    row.update(ess=rec.ess, logz_lb=rec.logz_lb, logz_iw=rec.logz_iw,
               delta_log_z=None if truth is None else abs(rec.logz_iw - truth))
    return row


def summarize_cells(cells: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation over seeds for every (kind, regime, integrator, N)."""
    metrics = ["ess", "logz_lb", "delta_log_z"]
    frame = cells.copy()
    for col in metrics:
        frame[col] = pd.to_numeric(frame[col], errors="coerce")
    grouped = frame.groupby(CELL_KEYS, sort=False)
    out = grouped[metrics].agg(["mean", "std"])
    out.columns = [f"{name}_{stat}" for name, stat in out.columns]
    out["diverged"] = grouped["diverged"].sum().astype(int)
    out["seeds"] = grouped["seed"].count()
    return out.reset_index()


def ess_plot_data(summary: pd.DataFrame) -> pd.DataFrame:
    frame = summary.copy()
    frame["series"] = frame["kind"] + "-" + frame["regime"] + "-" + frame["integrator"]
    return frame[["series", "regime", "N", "ess_mean", "ess_std"]].sort_values(["series", "N"])


def cmd_compare(args: argparse.Namespace) -> int:
    matrix = load_run_config(args.config, model=CompareConfig)
    base = _apply_overrides(matrix.base, args)
    matrix = matrix.model_copy(update={"base": base})
    out = _out_dir(args, base, "compare")
    store = RunStore(out)
    store.write_manifest(matrix, extra={"cells": len(matrix.cells())})
    payloads = [cell.model_dump() for cell in matrix.cells()]
    workers = max(1, settings.BRIDGECRAFT_THREADS)
    logger.info("compare: %d cells, %d worker(s)", len(payloads), workers)
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
            rows = list(pool.map(run_cell, payloads, [str(out)] * len(payloads)))
    else:
        rows = [run_cell(p, str(out)) for p in payloads]
    cells = pd.DataFrame(rows)
    cells.to_csv(out / "cells.csv", index=False)
    summary = summarize_cells(cells)
    summary.to_csv(out / "comparison.csv", index=False)
    ess_plot_data(summary).to_csv(out / "ess_vs_N.csv", index=False)
    logger.info("comparison written to %s", out)
    return EXIT_OK


# ------- plot -------

def cmd_plot(args: argparse.Namespace) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    source = Path(args.input) if args.input else out / "ess_vs_N.csv"
    if not source.exists():
        raise ConfigError(f"plot data not found: {source}", [f"--input: no such file {source}"])
    data = pd.read_csv(source)
    fig, ax = plt.subplots(figsize=(6, 4))
    for series, group in data.groupby("series", sort=True):
        style = "--" if (group["regime"] == "overdamped").all() else "-"
        ax.errorbar(group["N"], group["ess_mean"], yerr=group["ess_std"].fillna(0.0), linestyle=style,
                    marker="o", capsize=3, label=series)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("N (integration steps)")
    ax.set_ylabel("ESS")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = out / "ess_vs_N.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info("plot written to %s", path)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "plot": cmd_plot}


def run(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging()
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        logger.error("usage error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        logger.error("training aborted at step %d: %s", exc.step, exc)
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BridgecraftError as exc:
        logger.error("numerical failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main():
    rc = run()
    if rc != 0:
        sys.exit(rc)


if __name__ == "__main__":
    main()
