"""Dense matrix reverse-mode differentiation.

A :class:`Node` wraps a 2-D float64 array. Each operation records its
inputs and a closure mapping the upstream gradient to input gradients;
:func:`backward` walks the tape in reverse topological order and then
frees it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside the domain of a function."""


class Node:
    """A matrix value on the tape, with an accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"Node needs a non-empty matrix, got shape {arr.shape}")
        self.value = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Node, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got {self.shape}")
        return float(self.value[0, 0])

    def detach(self) -> "Node":
        return Node(self.value.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def _record(value: np.ndarray, parents: Iterable[Node], backward_fn) -> Node:
    parents = tuple(parents)
    out = Node(value)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    return out


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


# -- activations -----------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity: ``relu``, ``leaky_relu``, ``tanh`` or ``sigmoid``."""

    kind: str
    slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "tanh", "sigmoid"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "slope": self.slope}

    @classmethod
    def from_dict(cls, d: dict) -> "Activation":
        return cls(d["kind"], float(d.get("slope", 0.2)))


RELU = Activation("relu")
TANH = Activation("tanh")
SIGMOID = Activation("sigmoid")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def apply_activation(x: Node, kind: Activation | str) -> Node:
    if isinstance(kind, str):
        kind = Activation(kind)
    v = x.value
    if kind.kind == "relu":
        y = np.maximum(v, 0.0)
        dy = (v > 0).astype(np.float64)
    elif kind.kind == "leaky_relu":
        y = np.where(v > 0, v, kind.slope * v)
        dy = np.where(v > 0, 1.0, kind.slope)
    elif kind.kind == "tanh":
        y = np.tanh(v)
        dy = 1.0 - y * y
    else:
        y = _sigmoid(v)
        dy = y * (1.0 - y)
    return _record(y, (x,), lambda g: (g * dy,))


def relu(x: Node) -> Node:
    return apply_activation(x, RELU)


def leaky_relu(x: Node, slope: float = 0.2) -> Node:
    return apply_activation(x, Activation("leaky_relu", slope))


def tanh(x: Node) -> Node:
    return apply_activation(x, TANH)


def sigmoid(x: Node) -> Node:
    return apply_activation(x, SIGMOID)


# -- linear algebra ---------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; ``b`` may be 1x1 and is then broadcast."""
    a, b = _as_node(a), _as_node(b)
    if a.shape == b.shape:
        return _record(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, 1):
        return _record(a.value + b.value, (a, b), lambda g: (g, g.sum(keepdims=True)))
    raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")


def scale(x: Node, c: float) -> Node:
    return _record(c * x.value, (x,), lambda g: (c * g,))


def neg(x: Node) -> Node:
    return scale(x, -1.0)


def one_minus(x: Node) -> Node:
    return _record(1.0 - x.value, (x,), lambda g: (-g,))


def clamp(x: Node, lo: float, hi: float) -> Node:
    """Clip into [lo, hi]; the gradient is passed only where no clipping occurred."""
    v = x.value
    inside = ((v >= lo) & (v <= hi)).astype(np.float64)
    return _record(np.clip(v, lo, hi), (x,), lambda g: (g * inside,))


# -- temporal operators -----------------------------------------------------

def conv1d_rows(x: Node, w: Node) -> Node:
    """Zero-padded 'same' convolution of every row of ``x`` with the 1 x (2M+1) kernel ``w``.

    ``out[:, j] = sum_{m=-M..M} x[:, j-m] * w[m]`` where ``w[m]`` is stored at
    column ``m + M``.
    """
    x, w = _as_node(x), _as_node(w)
    n, k = x.shape
    if w.shape[0] != 1 or w.shape[1] % 2 != 1:
        raise ConfigurationError(f"filter must be 1 x (2M+1), got {w.shape}")
    length = w.shape[1]
    if length > 2 * k + 1:
        raise ConfigurationError(f"filter length {length} exceeds 2K+1 = {2 * k + 1}")
    m_half = length // 2
    xv, wv = x.value, w.value[0]
    xp = np.zeros((n, k + 2 * m_half))
    xp[:, m_half:m_half + k] = xv
    out = np.zeros((n, k))
    # xp[:, j - m + M] == x[:, j - m]; slice start for shift m is M - m
    for idx in range(length):
        s = 2 * m_half - idx
        out += wv[idx] * xp[:, s:s + k]

    def backward_fn(g):
        gp = np.zeros((n, k + 2 * m_half))
        gw = np.empty(length)
        for idx in range(length):
            s = 2 * m_half - idx
            gp[:, s:s + k] += wv[idx] * g
            gw[idx] = np.vdot(g, xp[:, s:s + k])
        return gp[:, m_half:m_half + k], gw.reshape(1, -1)

    return _record(out, (x, w), backward_fn)


def interpolation_points(k_in: int, k_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left index, right index and right weight for resampling ``k_in`` points to ``k_out``.

    Abscissae are spread evenly so that the first and last output samples sit
    on the first and last input samples. A single output sample sits at the
    centre of the input.
    """
    if k_in < 1 or k_out < 1:
        raise ConfigurationError(f"resize needs positive widths, got {k_in} -> {k_out}")
    if k_in == 1:
        zeros = np.zeros(k_out, dtype=np.intp)
        return zeros, zeros, np.zeros(k_out)
    if k_out == 1:
        pos = np.array([(k_in - 1) / 2.0])
    else:
        pos = np.arange(k_out) * ((k_in - 1) / (k_out - 1))
    left = np.minimum(np.floor(pos).astype(np.intp), k_in - 2)
    frac = pos - left
    return left, left + 1, frac


def resize_temporal(x: Node, k_out: int) -> Node:
    """Piecewise-linear resampling of every row to ``k_out`` columns."""
    x = _as_node(x)
    n, k_in = x.shape
    if k_out == k_in:
        return _record(x.value.copy(), (x,), lambda g: (g,))
    left, right, frac = interpolation_points(k_in, k_out)
    xv = x.value
    out = xv[:, left] * (1.0 - frac) + xv[:, right] * frac

    def backward_fn(g):
        gx = np.zeros((n, k_in))
        np.add.at(gx.T, left, (g * (1.0 - frac)).T)
        np.add.at(gx.T, right, (g * frac).T)
        return (gx,)

    return _record(out, (x,), backward_fn)


# -- reductions --------------------------------------------------------------

def mean(x: Node) -> Node:
    size = x.value.size
    return _record(np.array([[x.value.mean()]]), (x,),
                   lambda g: (np.full(x.shape, g[0, 0] / size),))


def sum_all(x: Node) -> Node:
    return _record(np.array([[x.value.sum()]]), (x,), lambda g: (np.full(x.shape, g[0, 0]),))


def mean_rows(x: Node) -> Node:
    """Average over rows, giving a 1 x cols node."""
    n = x.shape[0]
    return _record(x.value.mean(axis=0, keepdims=True), (x,),
                   lambda g: (np.repeat(g / n, n, axis=0),))


def log(x: Node) -> Node:
    v = x.value
    if np.any(v <= 0):
        raise DomainError(f"log of non-positive entry (min {v.min():.3g})")
    return _record(np.log(v), (x,), lambda g: (g / v,))


# -- reverse sweep ----------------------------------------------------------

def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[int, Node]:
    """Fill ``.grad`` of every node reachable from the scalar ``loss``.

    Gradients of reachable nodes are zeroed first, so calling this twice on
    graphs sharing parameters does not double count. Returns the reachable
    leaf nodes with ``requires_grad`` keyed by ``id``. The tape is released
    afterwards.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    order = _topological_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones((1, 1))
    leaves: dict[int, Node] = {}
    for node in reversed(order):
        if node._backward is None:
            if node.requires_grad:
                leaves[id(node)] = node
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is not None and parent.requires_grad:
                parent.grad = parent.grad + g
    for node in order:
        node._parents = ()
        node._backward = None
    return leaves
