"""Path-space log-RND, training losses and evaluation metrics.

r_i = log π(Z_0) + Σ_n log p⃗ − Σ_n log p⃖ − log τ̃(Z_N); importance weights are exp(−r_i).
"""
from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from src.engine.dynamics import DriftSpec, State, Trajectory
from src.numerics import autodiff as ad
from src.utils.errors import UsageError

MAX_DIVERGENCE_DIM = 4


def rnd_total(trajectory: Trajectory, log_pi, log_tau):
    """Per-trajectory log-RND; differentiable w.r.t. everything the trajectory depends on."""
    return log_pi(trajectory.initial) + trajectory.cumulative - log_tau(trajectory.final)


def rnd_divergence_form(trajectory: Trajectory, drift: DriftSpec, sigma, dts, log_pi, log_tau) -> np.ndarray:
    """Continuous-form log-RND on the trajectory's own grid and noise (overdamped, d <= 4).

    log π/τ̃ + Σ_n [½|u−v|² − ∇·(f + σv)] Δ_n + (u−v)·√Δ_n ξ_n, with every term at the left point.
    Used as a cross-check for the kernel form; no gradients flow.
    """
    if trajectory.regime != "overdamped":
        raise UsageError("divergence-form RND is only available for the overdamped regime")
    x0 = ad.value(trajectory.initial.x)
    batch, d = x0.shape
    if d > MAX_DIVERGENCE_DIM:
        raise UsageError(f"divergence-form RND supports d <= {MAX_DIVERGENCE_DIM}, got {d}")
    sigma = ad.value(sigma)
    dts = ad.value(dts)
    total = np.array(ad.value(log_pi(trajectory.initial.values())), dtype=np.float64) \
        - ad.value(log_tau(trajectory.final.values()))
    for n in range(trajectory.n_steps):
        x = np.array(ad.value(trajectory.states[n].x))
        tape = ad.Tape()
        xl = tape.leaf(x, name="x")
        z = State(xl)
        u = ad.value(drift.u(z, n)) if drift.u is not None else 0.0
        v_node = drift.v(z, n) if drift.v is not None else 0.0
        g = drift.f(xl, n) + sigma * v_node
        div = np.zeros(batch)
        if ad.is_node(g):
            for j in range(d):
                partial = ad.grad(tape, ad.sum(g[:, j]), wrt=[xl])[xl]
                div += partial[:, j]
        diff = np.broadcast_to(np.asarray(u) - ad.value(v_node), (batch, d))
        xi = trajectory.noise[n][0]
        dt = float(dts[n])
        total = total + (0.5 * np.sum(diff * diff, axis=1) - div) * dt + np.sum(diff * xi, axis=1) * math.sqrt(dt)
    return total


# ------- losses -------

def kl_loss(r):
    """Mean of r: Monte-Carlo reverse KL between forward and backward path measures."""
    if np.size(ad.value(r)) == 0:
        raise UsageError("kl_loss: empty batch")
    return ad.mean(r)


def lv_loss(r):
    """Unbiased sample variance of r."""
    n = np.size(ad.value(r))
    if n < 2:
        raise UsageError("lv_loss: need at least 2 trajectories")
    centred = r - ad.mean(r)
    return ad.sum(ad.square(centred)) / float(n - 1)


# ------- metrics -------

def ess(r) -> float:
    """Normalized effective sample size (Σw)² / (nΣw²) of w = exp(−r), in log space."""
    lw = -np.asarray(ad.value(r), dtype=np.float64).reshape(-1)
    if lw.size == 0:
        raise UsageError("ess: empty batch")
    log_num = 2.0 * ad.logsumexp(lw)
    log_den = ad.logsumexp(2.0 * lw)
    return float(np.exp(log_num - log_den) / lw.size)


def logz_bounds(r) -> Tuple[float, float]:
    """(lower bound mean(−r), importance-weighted logsumexp(−r) − log n)."""
    neg = -np.asarray(ad.value(r), dtype=np.float64).reshape(-1)
    if neg.size == 0:
        raise UsageError("logz_bounds: empty batch")
    lb = float(np.mean(neg))
    iw = float(ad.logsumexp(neg) - math.log(neg.size))
    return lb, iw


def lb_standard_error(r) -> float:
    vals = np.asarray(ad.value(r), dtype=np.float64).reshape(-1)
    if vals.size < 2:
        return float("inf")
    return float(np.std(vals, ddof=1) / math.sqrt(vals.size))


def delta_log_z(iw: float, true_log_z) -> float | None:
    """|iw − log Z| when the reference value is known."""
    if true_log_z is None:
        return None
    return abs(iw - float(true_log_z))


__all__ = [
    "rnd_total", "rnd_divergence_form", "kl_loss", "lv_loss", "ess", "logz_bounds",
    "lb_standard_error", "delta_log_z", "MAX_DIVERGENCE_DIM",
]
