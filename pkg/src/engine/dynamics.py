"""One-step integrators for the controlled forward SDE and the log-ratio of
forward to backward transition kernels.

Schemes
-------
overdamped   : ``em``
underdamped  : ``em`` (semi-implicit, velocity first), ``obab``, ``baoab``, ``obabo``

Underdamped steps carry a diagonal mass matrix M: positions move with M⁻¹Y,
velocity noise and control contributions are scaled by σM^{1/2} and the
velocity kernels have variance σ²MΔ (σ²MΔ/2 for OBABO half steps).

For the splitting schemes the kernel log-ratio only involves the O-parts, so the
drift f̃ moves the states but never appears in ``log_ratio``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from src.numerics import autodiff as ad
from src.numerics.rng import batch_normals
from src.utils.errors import DivergedError, UsageError

logger = logging.getLogger("dynamics")

VAR_FLOOR = 1e-12

REGIME_SCHEMES = {
    "overdamped": ("em",),
    "underdamped": ("em", "obab", "baoab", "obabo"),
}
NOISE_PER_STEP = {"em": 1, "obab": 1, "baoab": 1, "obabo": 2}

ControlFn = Callable[["State", float], object]
DriftFn = Callable[[object, int], object]


@dataclass
class State:
    x: object
    y: object = None

    @property
    def underdamped(self) -> bool:
        return self.y is not None

    def values(self) -> "State":
        return State(np.array(ad.value(self.x)), None if self.y is None else np.array(ad.value(self.y)))


@dataclass
class StepResult:
    next: State
    log_ratio: object
    noise: np.ndarray
    f_next: object = None
    path: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class DriftSpec:
    """Deterministic drift plus control sources.

    ``f`` is the overdamped drift f(x, n) or the underdamped force f̃(x, n).
    ``u``/``v`` are None for the zero control. ``w``, when set, moves the states
    in place of ``u`` (off-policy proposals) while kernel ratios still use ``u``.
    """
    f: DriftFn
    u: Optional[ControlFn] = None
    v: Optional[ControlFn] = None
    w: Optional[ControlFn] = None
    regime: str = "overdamped"


def zero_control(z: State, t: float):
    return 0.0


def _ctl(fn: Optional[ControlFn], z: State, t: float):
    return 0.0 if fn is None else fn(z, t)


def _settle(v, detach: bool):
    return ad.detach(v) if detach else v


def _var(v):
    return ad.clip(v, VAR_FLOOR, None)


def _check_dt(dt):
    if not float(ad.value(dt)) > 0.0:
        raise UsageError(f"step size must be > 0, got {float(ad.value(dt))!r}")


def _kernel_pair(y_to, mean_fwd, y_back, mean_bwd, var):
    return ad.gaussian_logpdf(y_to, mean_fwd, var) - ad.gaussian_logpdf(y_back, mean_bwd, var)


# ------- overdamped -------

def em_overdamped_step(z: State, n: int, dt, sigma, drift: DriftSpec, xi,
                       f_n=None, detach: bool = False) -> StepResult:
    """X' = X + (f + σu)Δ + σ√Δ ξ, backward drift f + σv evaluated at X'."""
    _check_dt(dt)
    x = z.x
    f_n = drift.f(x, n) if f_n is None else f_n
    var = _var(sigma * sigma * dt)
    mean_u = x + (f_n + sigma * _ctl(drift.u, z, n)) * dt
    mean_w = mean_u if drift.w is None else x + (f_n + sigma * drift.w(z, n)) * dt
    x1 = _settle(mean_w + sigma * ad.sqrt(dt) * xi, detach)
    z1 = State(x1)
    f_next = drift.f(x1, n + 1)
    mean_b = x1 - (f_next + sigma * _ctl(drift.v, z1, n + 1)) * dt
    log_ratio = _kernel_pair(x1, mean_u, x, mean_b, var)
    return StepResult(z1, log_ratio, np.asarray(xi), f_next, {"x0": x, "x1": x1})


# ------- underdamped -------

def _coefficients(sigma, mass):
    sq = sigma * sigma
    return sq, sigma * ad.sqrt(mass), 1.0 / mass


def em_underdamped_step(z: State, n: int, dt, sigma, mass, drift: DriftSpec, xi,
                        f_n=None, detach: bool = False) -> StepResult:
    """Semi-implicit EM: velocity first, then X' = X + M⁻¹Y'Δ."""
    _check_dt(dt)
    x, y = z.x, z.y
    sq, scale, inv_m = _coefficients(sigma, mass)
    f_n = drift.f(x, n) if f_n is None else f_n
    var = _var(sq * mass * dt)
    damp = 1.0 - 0.5 * sq * dt
    mean_u = y * damp + scale * _ctl(drift.u, z, n) * dt + f_n * dt
    mean_w = mean_u if drift.w is None else y * damp + scale * drift.w(z, n) * dt + f_n * dt
    y1 = _settle(mean_w + scale * ad.sqrt(dt) * xi, detach)
    x1 = _settle(x + inv_m * y1 * dt, detach)
    z1 = State(x1, y1)
    f_next = drift.f(x1, n + 1)
    mean_b = y1 * (1.0 + 0.5 * sq * dt) - scale * _ctl(drift.v, z1, n + 1) * dt - f_next * dt
    log_ratio = _kernel_pair(y1, mean_u, y, mean_b, var)
    return StepResult(z1, log_ratio, np.asarray(xi), f_next, {"x0": x, "y0": y, "x1": x1, "y1": y1})


def obab_step(z: State, n: int, dt, sigma, mass, drift: DriftSpec, xi,
              f_n=None, detach: bool = False) -> StepResult:
    """O(Δ) → B(Δ/2) → A(Δ) → B(Δ/2)."""
    _check_dt(dt)
    x, y = z.x, z.y
    _, scale, inv_m = _coefficients(sigma, mass)
    f_n = drift.f(x, n) if f_n is None else f_n
    u_n = _ctl(drift.u, z, n)
    move = u_n if drift.w is None else drift.w(z, n)
    y_o = _settle(_o_mean(y, move, sigma, scale, dt, 0.5) + scale * ad.sqrt(dt) * xi, detach)
    y_b = _settle(y_o + f_n * dt / 2.0, detach)
    x1 = _settle(x + inv_m * y_b * dt, detach)
    f_next = drift.f(x1, n + 1)
    y1 = _settle(y_b + f_next * dt / 2.0, detach)
    path = {"x0": x, "y0": y, "y_o": y_o, "x1": x1, "y1": y1}
    log_ratio = splitting_log_ratio("obab", path, n, dt, sigma, mass, drift, u_values=(u_n,))
    return StepResult(State(x1, y1), log_ratio, np.asarray(xi), f_next, path)


def baoab_step(z: State, n: int, dt, sigma, mass, drift: DriftSpec, xi,
               f_n=None, detach: bool = False) -> StepResult:
    """B(Δ/2) → A(Δ/2) → O(Δ) at the mid state → A(Δ/2) → B(Δ/2)."""
    _check_dt(dt)
    x, y = z.x, z.y
    _, scale, inv_m = _coefficients(sigma, mass)
    f_n = drift.f(x, n) if f_n is None else f_n
    y_mid = _settle(y + f_n * dt / 2.0, detach)
    x_mid = _settle(x + inv_m * y_mid * dt / 2.0, detach)
    z_mid = State(x_mid, y_mid)
    u_mid = _ctl(drift.u, z_mid, n)
    move = u_mid if drift.w is None else drift.w(z_mid, n)
    y_o = _settle(_o_mean(y_mid, move, sigma, scale, dt, 0.5) + scale * ad.sqrt(dt) * xi, detach)
    x1 = _settle(x_mid + inv_m * y_o * dt / 2.0, detach)
    f_next = drift.f(x1, n + 1)
    y1 = _settle(y_o + f_next * dt / 2.0, detach)
    path = {"x0": x, "y0": y, "x_mid": x_mid, "y_mid": y_mid, "y_o": y_o, "x1": x1, "y1": y1}
    log_ratio = splitting_log_ratio("baoab", path, n, dt, sigma, mass, drift, u_values=(u_mid,))
    return StepResult(State(x1, y1), log_ratio, np.asarray(xi), f_next, path)


def obabo_step(z: State, n: int, dt, sigma, mass, drift: DriftSpec, xi1, xi2,
               f_n=None, detach: bool = False) -> StepResult:
    """O(Δ/2) → B(Δ/2) → A(Δ) → B(Δ/2) → O(Δ/2); second O uses time n + ½."""
    _check_dt(dt)
    x, y = z.x, z.y
    _, scale, inv_m = _coefficients(sigma, mass)
    f_n = drift.f(x, n) if f_n is None else f_n
    noise = scale * ad.sqrt(dt / 2.0)
    u_n = _ctl(drift.u, z, n)
    move = u_n if drift.w is None else drift.w(z, n)
    y_o1 = _settle(_o_mean(y, move, sigma, scale, dt, 0.25, half=True) + noise * xi1, detach)
    y_b1 = _settle(y_o1 + f_n * dt / 2.0, detach)
    x1 = _settle(x + inv_m * y_b1 * dt, detach)
    f_next = drift.f(x1, n + 1)
    y_b2 = _settle(y_b1 + f_next * dt / 2.0, detach)
    z_b = State(x1, y_b2)
    u_half = _ctl(drift.u, z_b, n + 0.5)
    move = u_half if drift.w is None else drift.w(z_b, n + 0.5)
    y1 = _settle(_o_mean(y_b2, move, sigma, scale, dt, 0.25, half=True) + noise * xi2, detach)
    path = {"x0": x, "y0": y, "y_o": y_o1, "x1": x1, "y_b": y_b2, "y1": y1}
    log_ratio = splitting_log_ratio("obabo", path, n, dt, sigma, mass, drift, u_values=(u_n, u_half))
    return StepResult(State(x1, y1), log_ratio, np.stack([np.asarray(xi1), np.asarray(xi2)]), f_next, path)


def _o_mean(y, control, sigma, scale, dt, damping: float, half: bool = False):
    """Y(1 - cσ²Δ) + σM^{1/2}·control·Δ (Δ/2 for half steps)."""
    h = dt / 2.0 if half else dt
    return y * (1.0 - damping * sigma * sigma * dt) + scale * control * h


def _o_back_mean(y, control, sigma, scale, dt, damping: float, half: bool = False):
    h = dt / 2.0 if half else dt
    return y * (1.0 + damping * sigma * sigma * dt) - scale * control * h


def splitting_log_ratio(scheme: str, path: Dict[str, object], n: int, dt, sigma, mass,
                        drift: DriftSpec, u_values=None):
    """Kernel log-ratio of a splitting step from its sub-states.

    Only the O-kernels contribute, so the result does not depend on ``drift.f``.
    ``u_values`` reuses forward controls already evaluated by the step.
    """
    sq, scale, _ = _coefficients(sigma, mass)
    x0, y0, y_o = path["x0"], path["y0"], path["y_o"]
    if scheme == "obab":
        z0 = State(x0, y0)
        u_n = u_values[0] if u_values else _ctl(drift.u, z0, n)
        var = _var(sq * mass * dt)
        mean_f = _o_mean(y0, u_n, sigma, scale, dt, 0.5)
        mean_b = _o_back_mean(y_o, _ctl(drift.v, State(x0, y_o), n), sigma, scale, dt, 0.5)
        return _kernel_pair(y_o, mean_f, y0, mean_b, var)
    if scheme == "baoab":
        x_mid, y_mid = path["x_mid"], path["y_mid"]
        u_mid = u_values[0] if u_values else _ctl(drift.u, State(x_mid, y_mid), n)
        var = _var(sq * mass * dt)
        mean_f = _o_mean(y_mid, u_mid, sigma, scale, dt, 0.5)
        mean_b = _o_back_mean(y_o, _ctl(drift.v, State(x_mid, y_o), n), sigma, scale, dt, 0.5)
        return _kernel_pair(y_o, mean_f, y_mid, mean_b, var)
    if scheme == "obabo":
        x1, y_b, y1 = path["x1"], path["y_b"], path["y1"]
        if u_values:
            u_n, u_half = u_values
        else:
            u_n = _ctl(drift.u, State(x0, y0), n)
            u_half = _ctl(drift.u, State(x1, y_b), n + 0.5)
        var = _var(0.5 * sq * mass * dt)
        second = _kernel_pair(
            y1, _o_mean(y_b, u_half, sigma, scale, dt, 0.25, half=True),
            y_b, _o_back_mean(y1, _ctl(drift.v, State(x1, y1), n + 1), sigma, scale, dt, 0.25, half=True),
            var,
        )
        first = _kernel_pair(
            y_o, _o_mean(y0, u_n, sigma, scale, dt, 0.25, half=True),
            y0, _o_back_mean(y_o, _ctl(drift.v, State(x0, y_o), n + 0.5), sigma, scale, dt, 0.25, half=True),
            var,
        )
        return second + first
    raise UsageError(f"no splitting kernel for scheme {scheme!r}")


# ------- rollout -------

@dataclass
class Trajectory:
    states: List[State]
    log_ratios: List[object]
    cumulative: object
    noise: np.ndarray
    scheme: str
    regime: str

    @property
    def initial(self) -> State:
        return self.states[0]

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


def check_scheme(regime: str, scheme: str):
    if regime not in REGIME_SCHEMES:
        raise UsageError(f"unknown regime {regime!r}")
    if scheme not in REGIME_SCHEMES[regime]:
        raise UsageError(f"integrator {scheme!r} is not available for the {regime} regime")


def draw_path_noise(seed: int, first_stream: int, batch: int, n_steps: int, scheme: str, regime: str, d: int):
    """Per-trajectory noise blocks; trajectory i always reads stream ``first_stream + i``.

    Returns (initial noise of shape (rows, batch, d), step noise of shape (N, k, batch, d)).
    """
    rows = 2 if regime == "underdamped" else 1
    k = NOISE_PER_STEP[scheme]
    block = batch_normals(seed, first_stream, batch, (rows + n_steps * k, d))
    init = np.transpose(block[:, :rows, :], (1, 0, 2))
    steps = np.transpose(block[:, rows:, :].reshape(batch, n_steps, k, d), (1, 2, 0, 3))
    return init, steps


def _non_finite(z: State) -> np.ndarray:
    bad = ~np.all(np.isfinite(ad.value(z.x)), axis=-1)
    if z.y is not None:
        bad |= ~np.all(np.isfinite(ad.value(z.y)), axis=-1)
    return np.flatnonzero(bad)


def integrate_step(scheme: str, z: State, n: int, dt, sigma, mass, drift: DriftSpec, noise,
                   f_n=None, detach: bool = False) -> StepResult:
    if not z.underdamped:
        return em_overdamped_step(z, n, dt, sigma, drift, noise[0], f_n=f_n, detach=detach)
    if scheme == "em":
        return em_underdamped_step(z, n, dt, sigma, mass, drift, noise[0], f_n=f_n, detach=detach)
    if scheme == "obab":
        return obab_step(z, n, dt, sigma, mass, drift, noise[0], f_n=f_n, detach=detach)
    if scheme == "baoab":
        return baoab_step(z, n, dt, sigma, mass, drift, noise[0], f_n=f_n, detach=detach)
    if scheme == "obabo":
        return obabo_step(z, n, dt, sigma, mass, drift, noise[0], noise[1], f_n=f_n, detach=detach)
    raise UsageError(f"unknown integrator {scheme!r}")


def rollout(initial: State, n_steps: int, scheme: str, drift: DriftSpec, sigma, mass, dts, noise,
            detach: bool = False) -> Trajectory:
    """Integrate N steps from ``initial`` accumulating the kernel log-ratios.

    ``noise`` has shape (N, k, batch, d) as produced by :func:`draw_path_noise`.
    Raises DivergedError with the failing step index on a non-finite state.
    """
    regime = "underdamped" if initial.underdamped else "overdamped"
    check_scheme(regime, scheme)
    if drift.regime != regime:
        raise UsageError(f"drift configured for {drift.regime}, state is {regime}")
    batch = np.shape(ad.value(initial.x))[0]
    states = [initial]
    ratios: List[object] = []
    cumulative = np.zeros(batch)
    z, f_cur = initial, None
    for n in range(n_steps):
        res = integrate_step(scheme, z, n, dts[n], sigma, mass, drift, noise[n], f_n=f_cur, detach=detach)
        bad = _non_finite(res.next)
        if bad.size or not np.all(np.isfinite(ad.value(res.log_ratio))):
            bad = bad if bad.size else np.flatnonzero(~np.isfinite(ad.value(res.log_ratio)))
            logger.debug("rollout diverged at step %d (%d trajectories)", n + 1, bad.size)
            raise DivergedError(n + 1, bad)
        ratios.append(res.log_ratio)
        cumulative = cumulative + res.log_ratio
        states.append(res.next)
        z, f_cur = res.next, res.f_next
    return Trajectory(states, ratios, cumulative, np.asarray(noise), scheme, regime)


__all__ = [
    "State", "StepResult", "DriftSpec", "Trajectory", "VAR_FLOOR", "REGIME_SCHEMES", "NOISE_PER_STEP",
    "zero_control", "em_overdamped_step", "em_underdamped_step", "obab_step", "baoab_step", "obabo_step",
    "splitting_log_ratio", "integrate_step", "rollout", "draw_path_noise", "check_scheme",
]
