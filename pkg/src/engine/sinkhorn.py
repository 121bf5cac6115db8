"""Debiased entropic optimal transport (Sinkhorn divergence) between sample sets.

S(a, b) = OT_ε(a, b) − ½ OT_ε(a, a) − ½ OT_ε(b, b), squared Euclidean cost,
uniform marginals, log-domain iterations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from src.utils.errors import UsageError

logger = logging.getLogger("sinkhorn")

DEFAULT_ITERS = 500
DEFAULT_TOL = 1e-6
EPSILON_FRACTION = 0.05


@dataclass
class SinkhornResult:
    distance: float
    converged: bool
    epsilon: float
    iterations: int

    def to_dict(self):
        return {"distance": self.distance, "converged": self.converged,
                "epsilon": self.epsilon, "iterations": self.iterations}


def default_epsilon(a: np.ndarray, b: np.ndarray) -> float:
    """5% of the median pairwise squared distance of the pooled samples."""
    pooled = np.concatenate([a, b], axis=0)
    sq = cdist(pooled, pooled, "sqeuclidean")
    off = sq[~np.eye(len(pooled), dtype=bool)]
    med = float(np.median(off)) if off.size else 0.0
    return EPSILON_FRACTION * med if med > 0 else 1.0


def _entropic_ot(a: np.ndarray, b: np.ndarray, eps: float, iters: int, tol: float):
    cost = cdist(a, b, "sqeuclidean")
    log_a = np.full(len(a), -np.log(len(a)))
    log_b = np.full(len(b), -np.log(len(b)))
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    converged = False
    it = 0
    for it in range(1, iters + 1):
        f = -eps * logsumexp((g[None, :] - cost) / eps + log_b[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - cost) / eps + log_a[:, None], axis=0)
        # column marginals are exact after the g update; check the rows
        log_plan = (f[:, None] + g[None, :] - cost) / eps + log_a[:, None] + log_b[None, :]
        row_err = np.abs(np.exp(logsumexp(log_plan, axis=1)) - np.exp(log_a)).sum()
        if row_err < tol:
            converged = True
            break
    value = float(np.exp(log_a) @ f + np.exp(log_b) @ g)
    return value, converged, it


def sinkhorn_distance(a, b, epsilon: Optional[float] = None, iters: int = DEFAULT_ITERS,
                      tol: float = DEFAULT_TOL) -> SinkhornResult:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise UsageError("sinkhorn_distance: sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"sinkhorn_distance: dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    eps = default_epsilon(a, b) if epsilon is None else float(epsilon)
    if eps <= 0:
        raise UsageError("sinkhorn_distance: epsilon must be > 0")

    ab, c1, n1 = _entropic_ot(a, b, eps, iters, tol)
    ba, c2, n2 = _entropic_ot(b, a, eps, iters, tol)
    aa, c3, n3 = _entropic_ot(a, a, eps, iters, tol)
    bb, c4, n4 = _entropic_ot(b, b, eps, iters, tol)
    # symmetrized cross term keeps S(a, b) == S(b, a) bit for bit
    distance = 0.5 * (ab + ba) - 0.5 * (aa + bb)
    converged = c1 and c2 and c3 and c4
    if not converged:
        logger.warning("sinkhorn did not reach tolerance %.1e within %d iterations (eps=%.3g)", tol, iters, eps)
    return SinkhornResult(float(distance), converged, eps, max(n1, n2, n3, n4))


__all__ = ["SinkhornResult", "sinkhorn_distance", "default_epsilon"]
