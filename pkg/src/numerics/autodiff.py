"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Primitives work on whole arrays (batch x dim), so a rollout of N steps through
an L-layer network records O(N * L) nodes rather than one node per scalar.

Every primitive accepts plain ``np.ndarray`` / float inputs as well as ``Node``
inputs. When no input is a ``Node`` the primitive simply returns the numpy
result, which lets the same target / network / integrator code run both on the
tape (training) and without it (evaluation).

Usage::

    tape = Tape()
    w = tape.leaf(np.array([3.0]), name="w")
    y = ops.sum(w * w)
    grads = grad(tape, y)          # {w: array([6.])}
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.utils.errors import DomainError, UsageError

Vjp = Callable[[np.ndarray], np.ndarray]


# ------- Tape / Node -------

class Node:
    """A value recorded on a tape together with how to pull gradients back to its inputs."""

    __slots__ = ("value", "tape", "index", "parents", "name")
    # numpy must defer to Node's reflected operators (ndarray + Node -> Node.__radd__)
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: "Tape", index: int,
                 parents: Tuple[Tuple["Node", Vjp], ...] = (), name: Optional[str] = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.parents = parents
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return not self.parents and self.name is not None

    def __repr__(self):
        label = self.name or f"#{self.index}"
        return f"Node({label}, shape={self.value.shape})"

    # arithmetic sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Append-only record of primitive applications. Single owner; never share across threads."""

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str) -> Node:
        arr = np.array(value, dtype=np.float64)
        node = Node(arr, self, len(self.nodes), (), name)
        self.nodes.append(node)
        return node

    def record(self, value: np.ndarray, parents: Sequence[Tuple[Node, Vjp]]) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), self, len(self.nodes), tuple(parents))
        self.nodes.append(node)
        return node

    def leaves(self) -> List[Node]:
        return [n for n in self.nodes if n.is_leaf]


def grad(tape: Tape, output: Node, wrt: Optional[Iterable[Node]] = None) -> Dict[Node, np.ndarray]:
    """Partials of a scalar ``output`` w.r.t. every leaf of ``tape`` (or only ``wrt``).

    Records are visited in strict reverse order of creation. Leaves that do not
    influence ``output`` get an exact zero array.
    """
    if not isinstance(output, Node) or output.tape is not tape or not (0 <= output.index < len(tape.nodes)) \
            or tape.nodes[output.index] is not output:
        raise UsageError("grad: output is not a node recorded on this tape")
    if output.value.size != 1:
        raise UsageError(f"grad: output must be scalar, got shape {output.value.shape}")
    targets = list(wrt) if wrt is not None else tape.leaves()
    for t in targets:
        if t.tape is not tape:
            raise UsageError(f"grad: {t!r} belongs to another tape")

    adjoint: Dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
    leaf_grads: Dict[int, np.ndarray] = {}
    for node in reversed(tape.nodes[: output.index + 1]):
        g = adjoint.pop(node.index, None)
        if g is None:
            continue
        if not node.parents:
            leaf_grads[node.index] = g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = adjoint.get(parent.index)
            adjoint[parent.index] = contrib if prev is None else prev + contrib
    return {t: leaf_grads.get(t.index, np.zeros_like(t.value)) for t in targets}


# ------- helpers -------

def is_node(x) -> bool:
    return isinstance(x, Node)


def value(x) -> np.ndarray:
    """Raw numpy value of a node or array."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def detach(x) -> np.ndarray:
    """Same value, no gradient path."""
    return value(x).copy() if isinstance(x, Node) else x


def _tape_of(*xs) -> Optional[Tape]:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise UsageError("operands live on different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _emit(out: np.ndarray, pairs: Sequence[Tuple[object, Vjp]]):
    """Wrap ``out`` in a Node when any input is a Node, otherwise return it unchanged."""
    tape = _tape_of(*(p for p, _ in pairs))
    if tape is None:
        return out
    return tape.record(out, [(p, f) for p, f in pairs if isinstance(p, Node)])


# ------- elementwise binary -------

def add(a, b):
    av, bv = value(a), value(b)
    return _emit(av + bv, [(a, lambda g: _unbroadcast(g, av.shape)),
                           (b, lambda g: _unbroadcast(g, bv.shape))])


def sub(a, b):
    av, bv = value(a), value(b)
    return _emit(av - bv, [(a, lambda g: _unbroadcast(g, av.shape)),
                           (b, lambda g: _unbroadcast(-g, bv.shape))])


def mul(a, b):
    av, bv = value(a), value(b)
    return _emit(av * bv, [(a, lambda g: _unbroadcast(g * bv, av.shape)),
                           (b, lambda g: _unbroadcast(g * av, bv.shape))])


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _emit(out, [(a, lambda g: _unbroadcast(g / bv, av.shape)),
                       (b, lambda g: _unbroadcast(-g * out / bv, bv.shape))])


def neg(a):
    return _emit(-value(a), [(a, lambda g: -g)])


def power(a, p: float):
    av = value(a)
    return _emit(av ** p, [(a, lambda g: g * p * av ** (p - 1))])


# ------- elementwise unary -------

def square(a):
    av = value(a)
    return _emit(av * av, [(a, lambda g: 2.0 * g * av)])


def sqrt(a):
    out = np.sqrt(value(a))
    return _emit(out, [(a, lambda g: 0.5 * g / out)])


def exp(a):
    out = np.exp(value(a))
    return _emit(out, [(a, lambda g: g * out)])


def log(a):
    av = value(a)
    return _emit(np.log(av), [(a, lambda g: g / av)])


def tanh(a):
    out = np.tanh(value(a))
    return _emit(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    out = expit(value(a))
    return _emit(out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a):
    """log(1 + e^a), stable for large |a|."""
    av = value(a)
    return _emit(np.logaddexp(0.0, av), [(a, lambda g: g * expit(av))])


def log_sigmoid(a):
    av = value(a)
    return _emit(-np.logaddexp(0.0, -av), [(a, lambda g: g * expit(-av))])


_GELU_K = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


def gelu(a):
    """Gaussian-error linear unit (tanh form); asymptotically affine."""
    av = value(a)
    t = np.tanh(_GELU_K * (av + _GELU_C * av ** 3))
    out = 0.5 * av * (1.0 + t)

    def vjp(g):
        dt = (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * av * av)
        return g * (0.5 * (1.0 + t) + 0.5 * av * dt)

    return _emit(out, [(a, vjp)])


def clip(a, lo: Optional[float] = None, hi: Optional[float] = None):
    """Clamp to [lo, hi]; zero gradient where the clamp is active."""
    av = value(a)
    out = np.clip(av, lo, hi)
    inside = np.ones_like(av, dtype=bool)
    if lo is not None:
        inside &= av >= lo
    if hi is not None:
        inside &= av <= hi
    return _emit(out, [(a, lambda g: g * inside)])


# ------- linear algebra / structure -------

def matmul(a, b):
    """2-D matrix product (affine layers: x @ W)."""
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise UsageError(f"matmul: incompatible shapes {av.shape} @ {bv.shape}")
    return _emit(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy naming
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _emit(out, [(a, vjp)])


def mean(a, axis=None, keepdims: bool = False):
    av = value(a)
    count = av.size if axis is None else av.shape[axis]
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def concat(xs: Sequence, axis: int = -1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])

    def slicer(i):
        def vjp(g):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[i], bounds[i + 1])
            return g[tuple(idx)]
        return vjp

    return _emit(out, [(x, slicer(i)) for i, x in enumerate(xs)])


def stack(xs: Sequence, axis: int = -1):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    ax = axis % out.ndim
    return _emit(out, [(x, (lambda i: lambda g: np.take(g, i, axis=ax))(i)) for i, x in enumerate(xs)])


def reshape(a, shape):
    av = value(a)
    return _emit(av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def getitem(a, idx):
    av = value(a)

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        return full

    return _emit(av[idx], [(a, vjp)])


# ------- reductions -------

def logsumexp(a, axis=None):
    """log sum exp(a) with max-shift; exact for a single element."""
    av = value(a)
    if av.size == 0:
        raise UsageError("logsumexp: empty input")
    m = np.max(av, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(av - m)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out_k = m + np.log(total)
    out = np.squeeze(out_k, axis=axis) if axis is not None else out_k.reshape(())

    def vjp(g):
        gk = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * av.ndim)
        return gk * shifted / total

    return _emit(out, [(a, vjp)])


def gaussian_logpdf(x, mean_, var):
    """Σ_i [-½ log(2π v_i) - (x_i - m_i)² / (2 v_i)] over the last axis.

    Raises DomainError naming the first non-positive variance entry.
    """
    xv, mv, vv = value(x), value(mean_), value(var)
    bad = np.flatnonzero(~(vv > 0))
    if bad.size:
        i = int(bad[0])
        coord = i % vv.shape[-1] if vv.ndim else i
        raise DomainError(f"gaussian_logpdf: variance entry {coord} is {vv.reshape(-1)[i]!r}, must be > 0", index=coord)
    diff = xv - mv
    shape = np.broadcast_shapes(xv.shape, mv.shape, vv.shape)
    terms = -0.5 * np.log(2.0 * np.pi * vv) - diff * diff / (2.0 * vv)
    out = np.sum(np.broadcast_to(terms, shape), axis=-1)

    def expand(g):
        return np.broadcast_to(np.expand_dims(g, -1), shape)

    return _emit(out, [
        (x, lambda g: _unbroadcast(-expand(g) * diff / vv, xv.shape)),
        (mean_, lambda g: _unbroadcast(expand(g) * diff / vv, mv.shape)),
        (var, lambda g: _unbroadcast(expand(g) * (diff * diff / (2.0 * vv * vv) - 0.5 / vv), vv.shape)),
    ])


__all__ = [
    "Node", "Tape", "grad", "is_node", "value", "detach",
    "add", "sub", "mul", "div", "neg", "power", "square", "sqrt", "exp", "log", "tanh",
    "sigmoid", "softplus", "log_sigmoid", "gelu", "clip", "matmul", "sum", "mean",
    "concat", "stack", "reshape", "getitem", "logsumexp", "gaussian_logpdf",
]
