"""Constrained hyperparameters, step-size schedule, annealing schedule and Gaussian prior.

All positive quantities are stored unconstrained and mapped through softplus:
σ = softplus(eta_sigma), M = softplus(eta_M), Σ = softplus(eta_Sigma),
a = softplus(eta_delta). Matrices are diagonal and kept as vectors. The annealing
increments are softplus(b) for the first N-1 steps and softplus(b_last) for the last.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Optional

import numpy as np

from src.numerics import autodiff as ad
from src.numerics.rng import RngStream, sample_standard_normal
from src.utils.errors import BridgecraftError, UsageError

FIELDS = ("eta_sigma", "eta_M", "eta_mu", "eta_Sigma", "eta_delta", "b", "b_last")

# learn flag -> fields it controls
LEARN_GROUPS: Dict[str, tuple] = {
    "sigma": ("eta_sigma",),
    "M": ("eta_M",),
    "prior": ("eta_mu", "eta_Sigma"),
    "T": ("eta_delta",),
    "beta": ("b", "b_last"),
}

DEFAULT_LEARN = {"sigma": True, "M": False, "prior": True, "T": True, "beta": True}
SCHEDULES = ("cosine", "uniform")


def inverse_softplus(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


@dataclass
class HyperParams:
    eta_sigma: object
    eta_M: object
    eta_mu: object
    eta_Sigma: object
    eta_delta: object
    b: object
    b_last: object
    learn_flags: Dict[str, bool] = field(default_factory=lambda: dict(DEFAULT_LEARN))
    schedule: str = "cosine"

    @classmethod
    def initial(cls, d: int, n_steps: int, a: float = 0.01, sigma: float = 1.0,
                learn_flags: Optional[Dict[str, bool]] = None, schedule: str = "cosine") -> "HyperParams":
        """σ = M = Σ = I, μ = 0, step scale ``a``, linear annealing."""
        if schedule not in SCHEDULES:
            raise UsageError(f"unknown step-size schedule {schedule!r}")
        flags = dict(DEFAULT_LEARN)
        flags.update(learn_flags or {})
        one = float(inverse_softplus(1.0))
        return cls(
            eta_sigma=np.full(d, float(inverse_softplus(sigma))),
            eta_M=np.full(d, one),
            eta_mu=np.zeros(d),
            eta_Sigma=np.full(d, one),
            eta_delta=np.array(float(inverse_softplus(a))),
            b=np.zeros(max(n_steps - 1, 0)),
            b_last=np.zeros(1),
            learn_flags=flags,
            schedule=schedule,
        )

    # constrained views
    @property
    def sigma(self):
        return ad.softplus(self.eta_sigma)

    @property
    def mass(self):
        return ad.softplus(self.eta_M)

    @property
    def prior_mean(self):
        return self.eta_mu

    @property
    def prior_var(self):
        return ad.softplus(self.eta_Sigma)

    @property
    def step_scale(self):
        return ad.softplus(self.eta_delta)

    @property
    def dim(self) -> int:
        return int(np.shape(ad.value(self.eta_sigma))[0])

    def is_learned(self, name: str) -> bool:
        return any(name in LEARN_GROUPS[flag] for flag, on in self.learn_flags.items() if on)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: np.array(ad.value(getattr(self, name)), dtype=np.float64) for name in FIELDS}

    def with_arrays(self, values: Dict[str, np.ndarray]) -> "HyperParams":
        return replace(self, **{k: np.array(v, dtype=np.float64) for k, v in values.items() if k in FIELDS})

    def bind(self, tape: ad.Tape, prefix: str = "hp."):
        """Copy whose learned fields are tape leaves; returns (bound, {name: leaf})."""
        leaves = {}
        updates = {}
        for name in FIELDS:
            if self.is_learned(name):
                leaf = tape.leaf(ad.value(getattr(self, name)), name=prefix + name)
                leaves[prefix + name] = leaf
                updates[name] = leaf
        return replace(self, **updates), leaves

    def detached(self) -> "HyperParams":
        return replace(self, **{name: ad.detach(getattr(self, name)) for name in FIELDS})

    def to_dict(self) -> dict:
        return {
            "values": {k: v.tolist() for k, v in self.arrays().items()},
            "learn_flags": dict(self.learn_flags),
            "schedule": self.schedule,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "HyperParams":
        values = {k: np.asarray(v, dtype=np.float64) for k, v in payload["values"].items()}
        return cls(**values, learn_flags=dict(payload["learn_flags"]), schedule=payload.get("schedule", "cosine"))


# ------- schedules -------

def step_sizes(hp: HyperParams, n_steps: int):
    """Δ_n = a cos²(π/2 · n/N) for n = 0..N-1 (or a constant ``a`` for the uniform schedule)."""
    if n_steps < 1:
        raise UsageError("step_sizes: N must be >= 1")
    if hp.schedule == "uniform":
        shape = np.ones(n_steps)
    else:
        shape = np.cos(0.5 * math.pi * np.arange(n_steps) / n_steps) ** 2
    return hp.step_scale * shape


def terminal_time(hp: HyperParams, n_steps: int) -> float:
    return float(np.sum(ad.value(step_sizes(hp, n_steps))))


def anneal_schedule(hp: HyperParams, n_steps: int, detach: bool = False):
    """β_0..β_N from normalized cumulative softplus increments.

    ``b`` holds the first N-1 increments and ``b_last`` the N-th; all-equal
    entries give exactly the linear schedule.
    """
    if n_steps < 1:
        raise UsageError("anneal_schedule: N must be >= 1")
    b = ad.detach(hp.b) if detach else hp.b
    if np.shape(ad.value(b))[0] != n_steps - 1:
        raise UsageError(f"anneal_schedule: b has length {np.shape(ad.value(b))[0]}, expected {n_steps - 1}")
    if n_steps == 1:
        return np.array([0.0, 1.0])
    last = ad.detach(hp.b_last) if detach else hp.b_last
    inc = ad.softplus(ad.concat([b, ad.reshape(last, (1,))], axis=0))
    lower = np.tril(np.ones((n_steps, n_steps)))
    cums = ad.reshape(lower @ ad.reshape(inc, (n_steps, 1)), (n_steps,))
    interior = cums[: n_steps - 1] / cums[n_steps - 1]
    beta = ad.concat([np.zeros(1), interior, np.ones(1)], axis=0)
    vals = ad.value(beta)
    if not (np.all(np.diff(vals) >= 0.0) and vals[0] == 0.0 and vals[-1] == 1.0):
        raise BridgecraftError(f"annealing schedule lost monotonicity: {vals}")
    return beta


def linear_schedule(n_steps: int) -> np.ndarray:
    return np.arange(n_steps + 1) / n_steps


# ------- prior -------

def prior_logpdf(hp: HyperParams, x):
    return ad.gaussian_logpdf(x, hp.prior_mean, hp.prior_var)


def grad_log_prior(hp: HyperParams, x):
    return (hp.prior_mean - x) / hp.prior_var


def prior_transform(hp: HyperParams, xi):
    """Reparameterized draw x = μ + √Σ · ξ (gradients reach μ and Σ)."""
    return hp.prior_mean + ad.sqrt(hp.prior_var) * xi


def prior_sample(hp: HyperParams, stream: RngStream):
    return prior_transform(hp, sample_standard_normal(stream, hp.dim))


def trainable_fields(hp: HyperParams) -> Iterable[str]:
    return [name for name in FIELDS if hp.is_learned(name)]


__all__ = [
    "HyperParams", "FIELDS", "LEARN_GROUPS", "DEFAULT_LEARN", "SCHEDULES", "inverse_softplus",
    "step_sizes", "terminal_time", "anneal_schedule", "linear_schedule",
    "prior_logpdf", "grad_log_prior", "prior_transform", "prior_sample", "trainable_fields",
]
