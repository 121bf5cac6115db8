"""Benchmark target densities.

Every target exposes an unnormalized log-density and its analytic gradient.
Both are written with the autodiff primitives so the drift built on
``grad_log_rho`` can itself be differentiated during training.

Inputs are batches of shape (batch, d); a 1-D numpy vector is accepted for
convenience and yields a scalar / vector result.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.special import ndtr

from src.numerics import autodiff as ad
from src.numerics.rng import RngStream, sample_standard_normal
from src.utils.errors import ConfigError, UsageError

logger = logging.getLogger("targets")

FUNNEL_VAR_BOUNDS = (1e-8, 1e8)
_LOG_2PI = math.log(2.0 * math.pi)


class TargetDensity:
    """Unnormalized target ρ with gradient and an optional reference log Z."""

    name: str = "target"
    dim: int = 0
    true_log_z: Optional[float] = None
    log_z_source: Optional[str] = None

    def log_rho(self, x):
        if isinstance(x, np.ndarray) and x.ndim == 1:
            return self._log_rho(x[None, :])[0]
        self._check_dim(x)
        return self._log_rho(x)

    def grad_log_rho(self, x):
        if isinstance(x, np.ndarray) and x.ndim == 1:
            return self._grad_log_rho(x[None, :])[0]
        self._check_dim(x)
        return self._grad_log_rho(x)

    def _check_dim(self, x):
        shape = ad.value(x).shape
        if len(shape) != 2 or shape[1] != self.dim:
            raise UsageError(f"{self.name}: expected points of dimension {self.dim}, got shape {shape}")

    def _log_rho(self, x):
        raise NotImplementedError

    def _grad_log_rho(self, x):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "true_log_z": self.true_log_z, "log_z_source": self.log_z_source}

    def sample(self, stream: RngStream, n: int) -> np.ndarray:
        """Exact draws from the normalized target, where an exact sampler exists."""
        raise UsageError(f"{self.name}: no exact sampler available")


# ------- Funnel -------

@dataclass
class Funnel(TargetDensity):
    """x_1 ~ N(0, 9), x_i | x_1 ~ N(0, e^{x_1}).

    The conditional variance e^{x_1} is clamped to [1e-8, 1e8]; outside
    |x_1| > ~18.4 the density deviates from the textbook funnel.
    """
    dim: int = 10
    name: str = "funnel"
    true_log_z: Optional[float] = 0.0
    log_z_source: Optional[str] = "analytic"

    def __post_init__(self):
        if self.dim < 2:
            raise UsageError("funnel requires d >= 2")

    def _parts(self, x):
        x1 = x[:, 0:1]
        rest = x[:, 1:]
        var = ad.clip(ad.exp(x1), *FUNNEL_VAR_BOUNDS)
        return x1, rest, var

    def _log_rho(self, x):
        x1, rest, var = self._parts(x)
        k = self.dim - 1
        head = -0.5 * math.log(18.0 * math.pi) - ad.square(x1) / 18.0
        tail = -0.5 * k * _LOG_2PI - 0.5 * k * ad.log(var) \
            - ad.sum(ad.square(rest), axis=1, keepdims=True) / (2.0 * var)
        return ad.sum(head + tail, axis=1)

    def _grad_log_rho(self, x):
        x1, rest, var = self._parts(x)
        lo, hi = FUNNEL_VAR_BOUNDS
        e = np.exp(ad.value(x1))
        inside = ((e >= lo) & (e <= hi)).astype(np.float64)
        sq = ad.sum(ad.square(rest), axis=1, keepdims=True)
        g1 = -x1 / 9.0 + 0.5 * (sq / var - float(self.dim - 1)) * inside
        return ad.concat([g1, -rest / var], axis=1)

    def sample(self, stream: RngStream, n: int) -> np.ndarray:
        xi = sample_standard_normal(stream, n * self.dim).reshape(n, self.dim)
        x1 = 3.0 * xi[:, :1]
        scale = np.sqrt(np.clip(np.exp(x1), *FUNNEL_VAR_BOUNDS))
        return np.concatenate([x1, scale * xi[:, 1:]], axis=1)


# ------- ManyWell -------

def double_well_log_integral(delta: float, limit: int = 200, bound: float = 6.0) -> float:
    """log ∫_{-bound}^{bound} exp(-(t² - δ)²) dt by adaptive quadrature."""
    root = math.sqrt(delta)
    value, err = integrate.quad(
        lambda t: math.exp(-(t * t - delta) ** 2), -bound, bound,
        points=[-root, 0.0, root], limit=limit, epsabs=1e-14, epsrel=1e-13,
    )
    if err > 1e-10:
        logger.warning("double-well quadrature error estimate %.3g above 1e-10", err)
    return math.log(value)


@dataclass
class ManyWell(TargetDensity):
    """m double wells (x_i² - δ)² plus d - m standard Gaussian coordinates."""
    dim: int = 10
    m: int = 3
    delta: float = 2.0
    name: str = "manywell"
    log_z_source: Optional[str] = "quadrature"

    def __post_init__(self):
        if not 1 <= self.m <= self.dim:
            raise UsageError(f"manywell requires 1 <= m <= d, got m={self.m}, d={self.dim}")
        if self.delta <= 0:
            raise UsageError("manywell requires delta > 0")
        self.true_log_z = self.m * double_well_log_integral(self.delta) + 0.5 * (self.dim - self.m) * _LOG_2PI

    def _log_rho(self, x):
        wells = x[:, : self.m]
        out = -ad.sum(ad.square(ad.square(wells) - self.delta), axis=1)
        if self.m < self.dim:
            out = out - 0.5 * ad.sum(ad.square(x[:, self.m:]), axis=1)
        return out

    def _grad_log_rho(self, x):
        wells = x[:, : self.m]
        g = -4.0 * wells * (ad.square(wells) - self.delta)
        if self.m == self.dim:
            return g
        return ad.concat([g, -x[:, self.m:]], axis=1)


# ------- Gaussian mixture -------

@dataclass
class GaussianMixture(TargetDensity):
    """Σ_k w_k N(μ_k, var·I); normalized."""
    means: np.ndarray = None
    weights: np.ndarray = None
    var: float = 1.0
    name: str = "gmm"
    true_log_z: Optional[float] = 0.0
    log_z_source: Optional[str] = "analytic"

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.means.shape[0],):
            raise UsageError("gmm: one weight per mean required")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise UsageError(f"gmm: weights must be positive and sum to 1 (sum={self.weights.sum()!r})")
        if self.var <= 0:
            raise UsageError("gmm: var must be > 0")
        self.dim = self.means.shape[1]
        self._log_w = np.log(self.weights)

    def _components(self, x):
        var = np.full(self.dim, self.var)
        cols = [self._log_w[k] + ad.gaussian_logpdf(x, self.means[k], var) for k in range(len(self.weights))]
        return ad.stack(cols, axis=1)

    def _log_rho(self, x):
        return ad.logsumexp(self._components(x), axis=1)

    def _grad_log_rho(self, x):
        comps = self._components(x)
        lse = ad.logsumexp(comps, axis=1)
        resp = ad.exp(comps - ad.reshape(lse, (-1, 1)))
        return (resp @ self.means - x) / self.var

    def sample(self, stream: RngStream, n: int) -> np.ndarray:
        xi = sample_standard_normal(stream, n * (self.dim + 1)).reshape(n, self.dim + 1)
        picks = np.searchsorted(np.cumsum(self.weights), ndtr(xi[:, 0]), side="right")
        picks = np.minimum(picks, len(self.weights) - 1)
        return self.means[picks] + math.sqrt(self.var) * xi[:, 1:]


def standard_gaussian(d: int) -> GaussianMixture:
    return GaussianMixture(means=np.zeros((1, d)), weights=np.ones(1), var=1.0, name="gaussian")


# ------- Bayesian logistic regression -------

@dataclass
class LogisticRegression(TargetDensity):
    """Posterior over weights w with N(0, prior_var·I) prior and ±1 labels."""
    features: np.ndarray = None
    labels: np.ndarray = None
    prior_var: float = 100.0
    name: str = "logistic"
    dataset: Optional[str] = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.features.shape[0] != self.labels.shape[0]:
            raise UsageError(f"logistic: {self.features.shape[0]} rows but {self.labels.shape[0]} labels")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise UsageError("logistic: labels must be -1 or +1")
        if self.prior_var <= 0:
            raise UsageError("logistic: prior_var must be > 0")
        self.dim = self.features.shape[1]
        self._signed = self.features * self.labels[:, None]

    def _logits(self, w):
        return w @ self._signed.T

    def _log_rho(self, w):
        prior = ad.gaussian_logpdf(w, np.zeros(self.dim), np.full(self.dim, self.prior_var))
        return ad.sum(ad.log_sigmoid(self._logits(w)), axis=1) + prior

    def _grad_log_rho(self, w):
        return ad.sigmoid(-self._logits(w)) @ self._signed - w / self.prior_var


def load_dataset(path: str | Path, standardize: bool = True):
    """Read a CSV whose last column is ``label`` in {-1, 1}; returns (features, labels)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}", [f"target.dataset_path: no such file {path}"])
    frame = pd.read_csv(path)
    if frame.columns[-1] != "label":
        raise ConfigError(f"dataset {path}: last column must be 'label'", [f"target.dataset_path: bad header in {path}"])
    features = frame.iloc[:, :-1].to_numpy(dtype=np.float64)
    labels = frame["label"].to_numpy(dtype=np.float64)
    if standardize:
        std = features.std(axis=0)
        features = (features - features.mean(axis=0)) / np.where(std > 0, std, 1.0)
    return features, labels


# ------- factory -------

def funnel(d: int) -> Funnel:
    return Funnel(dim=d)


def manywell(d: int, m: int, delta: float) -> ManyWell:
    return ManyWell(dim=d, m=m, delta=delta)


def gmm(means: Sequence[Sequence[float]], weights: Sequence[float], var: float) -> GaussianMixture:
    return GaussianMixture(means=np.asarray(means), weights=np.asarray(weights), var=var)


def logistic_regression(features, labels, prior_var: float = 100.0) -> LogisticRegression:
    return LogisticRegression(features=features, labels=labels, prior_var=prior_var)


def build_target(cfg) -> TargetDensity:
    """Instantiate the target named by a TargetConfig."""
    name = cfg.name
    if name == "funnel":
        return funnel(cfg.d)
    if name == "manywell":
        return manywell(cfg.d, cfg.m, cfg.delta)
    if name == "gaussian":
        return standard_gaussian(cfg.d)
    if name == "gmm":
        means = cfg.means if cfg.means is not None else _default_gmm_means(cfg.d)
        weights = cfg.weights if cfg.weights is not None else [1.0 / len(means)] * len(means)
        return gmm(means, weights, cfg.var)
    if name == "logistic":
        features, labels = load_dataset(cfg.dataset_path)
        target = logistic_regression(features, labels, cfg.prior_var)
        target.dataset = str(cfg.dataset_path)
        return target
    raise ConfigError(f"unknown target {name!r}", [f"target.name: unknown target {name!r}"])


def _default_gmm_means(d: int) -> List[List[float]]:
    # two modes at ±2 along the first axis
    first = [2.0] + [0.0] * (d - 1)
    second = [-2.0] + [0.0] * (d - 1)
    return [first, second]


__all__ = [
    "TargetDensity", "Funnel", "ManyWell", "GaussianMixture", "LogisticRegression",
    "funnel", "manywell", "gmm", "logistic_regression", "standard_gaussian",
    "double_well_log_integral", "load_dataset", "build_target", "FUNNEL_VAR_BOUNDS",
]
