"""ParamSet (hyperparameters + control nets) and batched path simulation."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.engine.controls import INIT_STREAM, ControlNet
from src.engine.dynamics import Trajectory, draw_path_noise, rollout
from src.engine.estimation import rnd_total
from src.engine.methods import MethodSpec, configure
from src.engine.params import HyperParams, step_sizes
from src.engine.targets import TargetDensity
from src.numerics import autodiff as ad


@dataclass
class ParamSet:
    hp: HyperParams
    nets: Dict[str, ControlNet]

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {f"hp.{k}": v for k, v in self.hp.arrays().items()}
        for net in self.nets.values():
            out.update(net.arrays())
        return out

    def trainable_names(self) -> List[str]:
        names = [f"hp.{k}" for k in self.hp.arrays() if self.hp.is_learned(k)]
        for net in self.nets.values():
            names.extend(net.arrays().keys())
        return names

    def with_arrays(self, values: Dict[str, np.ndarray]) -> "ParamSet":
        hp_vals = {k[3:]: v for k, v in values.items() if k.startswith("hp.")}
        return ParamSet(self.hp.with_arrays(hp_vals), {n: net.with_arrays(values) for n, net in self.nets.items()})

    def bind(self, tape: ad.Tape) -> Tuple["ParamSet", Dict[str, ad.Node]]:
        hp, leaves = self.hp.bind(tape)
        nets = {}
        for name, net in self.nets.items():
            nets[name], net_leaves = net.bind(tape)
            leaves.update(net_leaves)
        return ParamSet(hp, nets), leaves

    def network_parameter_count(self) -> int:
        return sum(net.parameter_count() for net in self.nets.values())


def init_params(spec: MethodSpec, d: int, n_steps: int, a: float = 0.01, sigma: float = 1.0,
                learn_flags: Optional[Dict[str, bool]] = None, schedule: str = "cosine",
                width: int = 128, seed: int = 0) -> ParamSet:
    hp = HyperParams.initial(d, n_steps, a=a, sigma=sigma, learn_flags=learn_flags, schedule=schedule)
    state_dim = 2 * d if spec.regime == "underdamped" else d
    nets = {
        name: ControlNet.initialize(name, state_dim, d, width=width, seed=seed, stream=INIT_STREAM + i)
        for i, name in enumerate(spec.networks)
    }
    return ParamSet(hp, nets)


@dataclass
class Simulation:
    trajectory: Trajectory
    rnd: object  # per-trajectory r, shape (batch,)


def simulate(spec: MethodSpec, target: TargetDensity, params: ParamSet, n_steps: int,
             seed: int, first_stream: int, batch: int, detach: bool = False) -> Simulation:
    """Sample ``batch`` trajectories from the extended prior and integrate them.

    Trajectory i uses RNG stream ``first_stream + i`` for all of its noise.
    """
    setup = configure(spec, target, params.hp, params.nets, n_steps)
    init_noise, step_noise = draw_path_noise(seed, first_stream, batch, n_steps, spec.integrator,
                                             spec.regime, target.dim)
    initial = setup.sample_initial(init_noise)
    if detach:
        initial = replace(initial, x=ad.detach(initial.x), y=None if initial.y is None else ad.detach(initial.y))
    if n_steps == 0:
        traj = Trajectory([initial], [], np.zeros(batch), step_noise, spec.integrator, spec.regime)
    else:
        dts = step_sizes(params.hp, n_steps)
        traj = rollout(initial, n_steps, spec.integrator, setup.drift, params.hp.sigma, params.hp.mass,
                       dts, step_noise, detach=detach)
    return Simulation(traj, rnd_total(traj, setup.log_pi, setup.log_tau))


__all__ = ["ParamSet", "init_params", "Simulation", "simulate"]
