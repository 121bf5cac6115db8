"""Control networks u_θ and v_γ.

Two hidden GELU layers (width 128 by default) over the state coordinates
(x, or x ⧺ y in the underdamped regime) concatenated with a time embedding.
The output layer starts at zero so a fresh sampler is plain Langevin dynamics.
The target score is deliberately not an input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Tuple

import numpy as np

from src.numerics import autodiff as ad
from src.numerics.rng import RngStream, sample_standard_normal
from src.utils.errors import CheckpointError, UsageError

N_FREQUENCIES = 4
N_TIME_FEATURES = 1 + 2 * N_FREQUENCIES
INIT_STREAM = 1 << 40


def time_features(t_index: float, n_steps: int, batch: int) -> np.ndarray:
    """[s, sin(2πks), cos(2πks) for k=1..4] with s = t/N, repeated over the batch."""
    s = float(t_index) / float(max(n_steps, 1))
    k = np.arange(1, N_FREQUENCIES + 1)
    feats = np.concatenate([[s], np.sin(2.0 * math.pi * k * s), np.cos(2.0 * math.pi * k * s)])
    return np.broadcast_to(feats, (batch, N_TIME_FEATURES))


@dataclass
class ControlNet:
    name: str
    state_dim: int
    out_dim: int
    layers: List[Tuple[object, object]]  # [(W, b), ...]

    @classmethod
    def initialize(cls, name: str, state_dim: int, out_dim: int, width: int = 128,
                   seed: int = 0, stream: int = INIT_STREAM) -> "ControlNet":
        sizes = [state_dim + N_TIME_FEATURES, width, width]
        rng = RngStream(seed, stream)
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = sample_standard_normal(rng, fan_in * fan_out).reshape(fan_in, fan_out) / math.sqrt(fan_in)
            layers.append((w, np.zeros(fan_out)))
        layers.append((np.zeros((width, out_dim)), np.zeros(out_dim)))
        return cls(name, state_dim, out_dim, layers)

    @property
    def input_dim(self) -> int:
        return self.state_dim + N_TIME_FEATURES

    def forward(self, inputs):
        h = inputs
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i < last:
                h = ad.gelu(h)
        return h

    # ------- parameter plumbing -------

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{self.name}.W{i}"] = np.array(ad.value(w))
            out[f"{self.name}.b{i}"] = np.array(ad.value(b))
        return out

    def with_arrays(self, values: Dict[str, np.ndarray]) -> "ControlNet":
        layers = []
        for i, (w, b) in enumerate(self.layers):
            layers.append((np.array(values.get(f"{self.name}.W{i}", ad.value(w))),
                           np.array(values.get(f"{self.name}.b{i}", ad.value(b)))))
        return replace(self, layers=layers)

    def bind(self, tape: ad.Tape):
        leaves = {}
        layers = []
        for i, (w, b) in enumerate(self.layers):
            wl = tape.leaf(ad.value(w), name=f"{self.name}.W{i}")
            bl = tape.leaf(ad.value(b), name=f"{self.name}.b{i}")
            leaves[wl.name] = wl
            leaves[bl.name] = bl
            layers.append((wl, bl))
        return replace(self, layers=layers), leaves

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.arrays().values()))

    def shape_manifest(self) -> dict:
        return {
            "name": self.name,
            "state_dim": self.state_dim,
            "out_dim": self.out_dim,
            "shapes": {k: list(v.shape) for k, v in self.arrays().items()},
        }

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for v in self.arrays().values()])

    @classmethod
    def unflatten(cls, flat: np.ndarray, manifest: dict) -> "ControlNet":
        shapes = manifest["shapes"]
        expected = sum(int(np.prod(s)) for s in shapes.values())
        if flat.size != expected:
            raise CheckpointError(f"control {manifest['name']}: {flat.size} weights, manifest expects {expected}")
        values, pos = {}, 0
        for key, shape in shapes.items():
            n = int(np.prod(shape))
            values[key] = flat[pos: pos + n].reshape(shape)
            pos += n
        n_layers = len(shapes) // 2
        layers = [(values[f"{manifest['name']}.W{i}"], values[f"{manifest['name']}.b{i}"]) for i in range(n_layers)]
        return cls(manifest["name"], manifest["state_dim"], manifest["out_dim"], layers)


def control_input(z, n_state: int):
    """State coordinates fed to a net: x, or x ⧺ y."""
    if z.y is None:
        parts = z.x
    else:
        parts = ad.concat([z.x, z.y], axis=1)
    width = np.shape(ad.value(parts))[1]
    if width != n_state:
        raise UsageError(f"control expects {n_state} state coordinates, got {width}")
    return parts


def control_eval(net: ControlNet, z, t_index: float, n_steps: int):
    """u or v at state ``z`` and grid time ``t_index`` (may be fractional, e.g. n + ½)."""
    coords = control_input(z, net.state_dim)
    batch = np.shape(ad.value(coords))[0]
    inputs = ad.concat([coords, time_features(t_index, n_steps, batch)], axis=1)
    return net.forward(inputs)


__all__ = ["ControlNet", "control_eval", "control_input", "time_features", "N_TIME_FEATURES", "INIT_STREAM"]
