"""Generator and discriminator built from graph-convolution layers.

Each layer computes ``act(A @ F(X))`` where ``A`` is the fixed graph filter
and ``F`` is the temporal feature filter: either a full ``k_in x k_out``
matrix or a single 1-D convolution kernel applied after linear resampling
to ``k_out`` columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Activation, Node
from .errors import ConfigurationError

DEFAULT_GENERATOR_WIDTHS = (5, 180, 720, 2880)
DEFAULT_GENERATOR_M = (12, 72, 144)
DEFAULT_DISCRIMINATOR_WIDTHS = (2880, 720, 180, 5)
DEFAULT_DISCRIMINATOR_M = (144, 72, 5)


class Variant(str, Enum):
    CONV1D = "conv1d"
    FULL = "full"


@dataclass(frozen=True)
class LayerSpec:
    k_in: int
    k_out: int
    m_half_width: int
    activation: Activation

    def __post_init__(self):
        if self.k_in < 1 or self.k_out < 1:
            raise ConfigurationError(f"layer widths must be >= 1, got {self.k_in} -> {self.k_out}")
        if self.m_half_width < 0 or self.m_half_width > self.k_out:
            raise ConfigurationError(
                f"half width M={self.m_half_width} must lie in [0, k_out={self.k_out}]")

    def to_dict(self) -> dict:
        return {"k_in": self.k_in, "k_out": self.k_out,
                "m_half_width": self.m_half_width, "activation": self.activation.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(int(d["k_in"]), int(d["k_out"]), int(d["m_half_width"]),
                   Activation.from_dict(d["activation"]))


def layer_specs(widths, m_values, hidden: Activation, last: Activation | None) -> list[LayerSpec]:
    """Chain ``widths`` into layers; ``last`` overrides the final activation if given."""
    widths = [int(w) for w in widths]
    m_values = [int(m) for m in m_values]
    if len(widths) < 1:
        raise ConfigurationError("need at least one width")
    if len(m_values) != len(widths) - 1:
        raise ConfigurationError(
            f"need one half width per transition: {len(widths) - 1} expected, got {len(m_values)}")
    specs = []
    for i, (k_in, k_out, m) in enumerate(zip(widths[:-1], widths[1:], m_values)):
        act = last if (last is not None and i == len(widths) - 2) else hidden
        specs.append(LayerSpec(k_in, k_out, m, act))
    return specs


def init_layer_param(spec: LayerSpec, variant: Variant, rng: np.random.Generator, name: str) -> Node:
    if variant is Variant.FULL:
        s = math.sqrt(6.0 / (spec.k_in + spec.k_out))
        shape = (spec.k_in, spec.k_out)
    else:
        length = 2 * spec.m_half_width + 1
        s = math.sqrt(6.0 / (length + 1))
        shape = (1, length)
    return Node(rng.uniform(-s, s, size=shape), requires_grad=True, name=name)


def layer_forward(spec: LayerSpec, a, x: Node, weight: Node, variant: Variant) -> Node:
    if x.shape[1] != spec.k_in:
        raise ad.ShapeError(f"layer expects {spec.k_in} columns, got {x.shape[1]}")
    if variant is Variant.FULL:
        filtered = ad.matmul(x, weight)
    else:
        filtered = ad.conv1d_rows(ad.resize_temporal(x, spec.k_out), weight)
    return ad.apply_activation(ad.matmul(Node(a), filtered), spec.activation)


class _GraphNet:
    """Shared storage and forward pass of a stack of graph-convolution layers."""

    def __init__(self, graph_filter, specs, variant, weights=None, rng=None, prefix="layer"):
        a = np.array(graph_filter, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigurationError(f"graph filter must be square, got {a.shape}")
        a.setflags(write=False)
        self.graph_filter = a
        self.specs = list(specs)
        self.variant = Variant(variant)
        for prev, nxt in zip(self.specs[:-1], self.specs[1:]):
            if prev.k_out != nxt.k_in:
                raise ConfigurationError(f"layer widths do not chain: {prev.k_out} -> {nxt.k_in}")
        if weights is None:
            rng = np.random.default_rng(rng)
            weights = [init_layer_param(s, self.variant, rng, f"{prefix}{i}")
                       for i, s in enumerate(self.specs)]
        else:
            weights = [w if isinstance(w, Node) else Node(w, requires_grad=True, name=f"{prefix}{i}")
                       for i, w in enumerate(weights)]
        self.weights = weights

    @property
    def n_farms(self) -> int:
        return self.graph_filter.shape[0]

    def _layers(self, x: Node) -> Node:
        if x.shape[0] != self.n_farms:
            raise ad.ShapeError(f"input has {x.shape[0]} rows, graph filter has {self.n_farms}")
        for spec, w in zip(self.specs, self.weights):
            x = layer_forward(spec, self.graph_filter, x, w, self.variant)
        return x

    def parameters(self) -> dict[str, Node]:
        return {w.name: w for w in self.weights}


class Generator(_GraphNet):
    """Noise ``N x K`` to scenario ``N x T`` in [-1, 1]."""

    def __init__(self, graph_filter, specs, variant=Variant.CONV1D, weights=None, rng=None):
        super().__init__(graph_filter, specs, variant, weights, rng, prefix="g")
        if self.specs and self.specs[-1].activation.kind != "tanh":
            raise ConfigurationError("generator output layer must use tanh")

    @classmethod
    def build(cls, graph_filter, widths=DEFAULT_GENERATOR_WIDTHS, m_values=DEFAULT_GENERATOR_M,
              variant=Variant.CONV1D, rng=None) -> "Generator":
        specs = layer_specs(widths, m_values, ad.RELU, ad.TANH)
        return cls(graph_filter, specs, variant, rng=rng)

    @property
    def noise_dim(self) -> int:
        return self.specs[0].k_in

    @property
    def horizon(self) -> int:
        return self.specs[-1].k_out

    def forward(self, z: Node) -> Node:
        return self._layers(z)

    def __call__(self, z) -> np.ndarray:
        return self.forward(Node(z)).value


class Discriminator(_GraphNet):
    """Scenario ``N x T`` to the probability that it is real.

    Layer outputs are averaged over farms, then a linear readout and a
    sigmoid give the scalar.
    """

    def __init__(self, graph_filter, specs, variant=Variant.CONV1D, weights=None,
                 readout=None, bias=None, rng=None):
        rng = np.random.default_rng(rng)
        super().__init__(graph_filter, specs, variant, weights, rng, prefix="d")
        k_last = self.specs[-1].k_out if self.specs else None
        if readout is None:
            if k_last is None:
                raise ConfigurationError("discriminator needs at least one layer")
            s = math.sqrt(6.0 / (k_last + 1))
            readout = rng.uniform(-s, s, size=(k_last, 1))
        self.readout = readout if isinstance(readout, Node) else Node(
            np.reshape(readout, (-1, 1)), requires_grad=True, name="d_readout")
        self.bias = bias if isinstance(bias, Node) else Node(
            0.0 if bias is None else bias, requires_grad=True, name="d_bias")

    @classmethod
    def build(cls, graph_filter, widths=DEFAULT_DISCRIMINATOR_WIDTHS, m_values=DEFAULT_DISCRIMINATOR_M,
              variant=Variant.CONV1D, slope: float = 0.2, rng=None) -> "Discriminator":
        specs = layer_specs(widths, m_values, Activation("leaky_relu", slope), None)
        return cls(graph_filter, specs, variant, rng=rng)

    @property
    def horizon(self) -> int:
        return self.specs[0].k_in

    def forward(self, x: Node) -> Node:
        feats = ad.mean_rows(self._layers(x))
        return ad.sigmoid(ad.add(ad.matmul(feats, self.readout), self.bias))

    def __call__(self, x) -> float:
        return self.forward(Node(x)).item()

    def parameters(self) -> dict[str, Node]:
        params = super().parameters()
        params[self.readout.name] = self.readout
        params[self.bias.name] = self.bias
        return params


@dataclass
class GcganModel:
    generator: Generator
    discriminator: Discriminator

    def parameters(self) -> dict[str, Node]:
        return {**self.generator.parameters(), **self.discriminator.parameters()}


def parameter_count(model) -> int:
    """Number of trainable scalars; the graph filter is fixed and not counted."""
    return int(sum(p.value.size for p in model.parameters().values()))
