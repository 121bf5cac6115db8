"""
Adam with global-norm clipping and a constant-then-cosine learning rate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.utils.errors import BridgecraftError

logger = logging.getLogger("optimizer")

CLIP_SLACK = 1e-9


@dataclass
class OptimState:
    base_lr: float
    total_steps: int
    decay_start: float = 3.0 / 7.0
    clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    lr_scale: float = 1.0
    lr_halved: bool = False
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def learning_rate(self, step: int | None = None) -> float:
        """Constant until ``decay_start·K`` steps, then cosine decay to 0 at K."""
        k = self.step if step is None else step
        start = int(math.floor(self.decay_start * self.total_steps))
        if k < start or self.total_steps <= start:
            lr = self.base_lr
        else:
            frac = min(1.0, (k - start) / (self.total_steps - start))
            lr = 0.5 * self.base_lr * (1.0 + math.cos(math.pi * frac))
        return lr * self.lr_scale

    def halve_once(self) -> bool:
        if self.lr_halved:
            return False
        self.lr_scale *= 0.5
        self.lr_halved = True
        logger.warning("learning rate halved after a diverged batch (scale=%.3g)", self.lr_scale)
        return True

    def scalars(self) -> dict:
        return {
            "base_lr": self.base_lr, "total_steps": self.total_steps, "decay_start": self.decay_start,
            "clip": self.clip, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step": self.step, "lr_scale": self.lr_scale, "lr_halved": self.lr_halved,
        }

    @classmethod
    def from_scalars(cls, payload: dict, m: Dict[str, np.ndarray], v: Dict[str, np.ndarray]) -> "OptimState":
        return cls(**payload, m=dict(m), v=dict(v))


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so their joint norm is at most ``max_norm``; returns (clipped, pre-clip norm)."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    clipped = {k: g * scale for k, g in grads.items()}
    after = global_norm(clipped)
    if after > max_norm * (1.0 + CLIP_SLACK):
        raise BridgecraftError(f"gradient norm {after} exceeds clip {max_norm} after clipping")
    return clipped, norm


def grads_finite(grads: Dict[str, np.ndarray]) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


def adam_update(state: OptimState, params: Dict[str, np.ndarray],
                grads: Dict[str, np.ndarray], step: int | None = None) -> Dict[str, np.ndarray]:
    """One Adam step on the entries of ``params`` that have a gradient.

    Gradients are clipped before the moment updates; ``step`` (the training step) picks the learning
    rate and defaults to the count of applied updates. Returns a new dict and advances ``state`` in place.
    """
    clipped, _ = clip_by_global_norm(grads, state.clip)
    lr = state.learning_rate(step)
    t = state.step + 1
    out = dict(params)
    for name, g in clipped.items():
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        out[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step = t
    return out


__all__ = ["OptimState", "global_norm", "clip_by_global_norm", "grads_finite", "adam_update", "CLIP_SLACK"]
