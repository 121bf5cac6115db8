"""Sampler families as choices of (f̃, u, v).

=====  ==============================  =========  ===================
kind   drift f̃                         u          v
=====  ==============================  =========  ===================
ULA    σσᵀ ∇log ν                      0          0
MCD    σσᵀ ∇log ν                      0          learned
CMCD   ½ σσᵀ ∇log ν                    learned    σᵀ∇log ν − u
DIS    −σσᵀ ∇log p_prior (UD), 2σσᵀx   learned    0
DBS    drift choice                    learned    learned
=====  ==============================  =========  ===================

ν_n ∝ p_prior^{1-β_n} ρ^{β_n}. DDS is a DIS configuration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional

import numpy as np

from src.engine.controls import ControlNet, control_eval
from src.engine.dynamics import DriftSpec, State, check_scheme, zero_control
from src.engine.params import HyperParams, anneal_schedule, grad_log_prior, linear_schedule, prior_logpdf, prior_transform
from src.engine.targets import TargetDensity
from src.numerics import autodiff as ad
from src.utils.errors import UsageError

logger = logging.getLogger("methods")

KINDS = ("ULA", "MCD", "CMCD", "DIS", "DBS")
NETWORKS = {"ULA": (), "MCD": ("v",), "CMCD": ("u",), "DIS": ("u",), "DBS": ("u", "v")}
DRIFT_CHOICES = ("zero", "grad_log_prior", "grad_log_target", "grad_log_nu", "grad_log_nu_learned")
PROPOSALS = ("forward", "uncontrolled")


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "DBS"
    regime: str = "underdamped"
    integrator: str = "obabo"
    drift: str = "grad_log_nu_learned"
    precondition: bool = True
    detach_beta: bool = False
    proposal: str = "forward"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown method {self.kind!r}")
        if self.drift not in DRIFT_CHOICES:
            raise UsageError(f"unknown drift choice {self.drift!r}")
        if self.proposal not in PROPOSALS:
            raise UsageError(f"unknown proposal {self.proposal!r}")
        check_scheme(self.regime, self.integrator)

    @property
    def networks(self):
        return NETWORKS[self.kind]

    @property
    def uses_annealing(self) -> bool:
        if self.kind in ("ULA", "MCD", "CMCD"):
            return True
        return self.kind == "DBS" and self.drift == "grad_log_nu_learned"

    @property
    def label(self) -> str:
        short = "UD" if self.regime == "underdamped" else "OD"
        return f"{self.kind}-{short}-{self.integrator.upper()}"


@dataclass
class Configured:
    """DriftSpec plus the extended prior π and target τ̃ of one sampler."""
    drift: DriftSpec
    log_pi: Callable[[State], object]
    log_tau: Callable[[State], object]
    sample_initial: Callable[[np.ndarray], State]
    beta: object


class _LastCall:
    """One-entry memo so v can reuse the f value the integrator just computed at the same state."""

    def __init__(self, fn):
        self.fn = fn
        self._key = None
        self._x = None
        self._out = None

    def __call__(self, x, t):
        if self._x is x and self._key == t:
            return self._out
        out = self.fn(x, t)
        self._x, self._key, self._out = x, t, out
        return out


def _beta_at(beta, t: float):
    """β at grid time t; fractional times interpolate linearly."""
    lo = int(np.floor(t))
    if lo == t:
        return beta[lo]
    return 0.5 * (beta[lo] + beta[lo + 1])


def _net_control(net: Optional[ControlNet], n_steps: int):
    if net is None:
        return None
    return lambda z, t: control_eval(net, z, t, n_steps)


def configure(spec: MethodSpec, target: TargetDensity, hp: HyperParams, nets: Dict[str, ControlNet],
              n_steps: int) -> Configured:
    """Build the DriftSpec and the extended π / τ̃ for ``spec``.

    ``hp`` and ``nets`` may be tape-bound (training) or plain arrays (evaluation).
    """
    missing = [k for k in spec.networks if k not in nets]
    extra = [k for k in nets if k not in spec.networks]
    if missing or extra:
        raise UsageError(f"{spec.kind} expects networks {spec.networks}, got {tuple(nets)}")
    if spec.kind == "DIS" and hp.prior_var is None:
        raise UsageError("DIS requires a Gaussian prior with analytic score")

    sigma = hp.sigma
    sq = sigma * sigma
    underdamped = spec.regime == "underdamped"

    if n_steps < 1:
        beta = np.zeros(1)
    elif spec.uses_annealing:
        beta = anneal_schedule(hp, n_steps, detach=spec.detach_beta)
    else:
        beta = linear_schedule(n_steps)

    def grad_log_nu(x, t, schedule=beta):
        b = _beta_at(schedule, t)
        return (1.0 - b) * grad_log_prior(hp, x) + b * target.grad_log_rho(x)

    f = _drift(spec, target, hp, sq, grad_log_nu, underdamped)
    f = _LastCall(f)

    u_tilde = _net_control(nets.get("u"), n_steps)
    v_tilde = _net_control(nets.get("v"), n_steps)
    if spec.kind == "CMCD":
        u = u_tilde
        v = lambda z, t: sigma * grad_log_nu(z.x, t) - u(z, t)
    else:
        u, v = u_tilde, v_tilde

    drift = DriftSpec(f=f, u=u, v=v, regime=spec.regime)
    if spec.precondition:
        drift = precondition(spec, drift, sigma, hp.mass)
    if spec.proposal == "uncontrolled":
        plain = DriftSpec(f=f, u=None, v=None, regime=spec.regime)
        if spec.precondition:
            plain = precondition(spec, plain, sigma, hp.mass)
        drift = replace(drift, w=plain.u or zero_control)

    mass = hp.mass

    def log_pi(z: State):
        out = prior_logpdf(hp, z.x)
        if underdamped:
            out = out + ad.gaussian_logpdf(z.y, 0.0, mass)
        return out

    def log_tau(z: State):
        out = target.log_rho(z.x)
        if underdamped:
            out = out + ad.gaussian_logpdf(z.y, 0.0, mass)
        return out

    def sample_initial(init_noise: np.ndarray) -> State:
        x = prior_transform(hp, init_noise[0])
        y = ad.sqrt(mass) * init_noise[1] if underdamped else None
        return State(x, y)

    return Configured(drift, log_pi, log_tau, sample_initial, beta)


def _drift(spec: MethodSpec, target: TargetDensity, hp: HyperParams, sq, grad_log_nu, underdamped: bool):
    kind = spec.kind
    if kind in ("ULA", "MCD"):
        return lambda x, t: sq * grad_log_nu(x, t)
    if kind == "CMCD":
        return lambda x, t: 0.5 * sq * grad_log_nu(x, t)
    if kind == "DIS":
        if underdamped:
            return lambda x, t: -sq * grad_log_prior(hp, x)
        return lambda x, t: 2.0 * sq * x
    # DBS
    choice = spec.drift
    if choice == "zero":
        return lambda x, t: 0.0 * ad.value(x)
    if choice == "grad_log_prior":
        return lambda x, t: grad_log_prior(hp, x)
    if choice == "grad_log_target":
        return lambda x, t: target.grad_log_rho(x)
    return grad_log_nu


def precondition(spec: MethodSpec, drift: DriftSpec, sigma, mass) -> DriftSpec:
    """Absorb a drift sign flip into the controls so zero controls stay well behaved.

    overdamped DIS           σu = σũ − 2f
    overdamped ULA/MCD/DBS   σv = σṽ − 2f
    underdamped (not CMCD)   σM^{1/2} v = σM^{1/2} ṽ + σσᵀ y
    """
    if spec.kind == "CMCD":
        return drift
    f, u_t, v_t = drift.f, drift.u, drift.v
    if spec.regime == "overdamped":
        if spec.kind == "DIS":
            u = lambda z, t: (0.0 if u_t is None else u_t(z, t)) - 2.0 * f(z.x, t) / sigma
            return replace(drift, u=u)
        v = lambda z, t: (0.0 if v_t is None else v_t(z, t)) - 2.0 * f(z.x, t) / sigma
        return replace(drift, v=v)
    v = lambda z, t: (0.0 if v_t is None else v_t(z, t)) + sigma * z.y / ad.sqrt(mass)
    return replace(drift, v=v)


__all__ = ["MethodSpec", "Configured", "configure", "precondition", "KINDS", "NETWORKS", "DRIFT_CHOICES", "PROPOSALS"]
