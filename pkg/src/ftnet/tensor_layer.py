"""Multilinear ("tensor") layers with hand-written forward and backward passes.

A tensor layer maps an input of shape ``(I_1, ..., I_N, C)`` to an output of
shape ``(J_1, ..., J_N, C)``::

    H = X x_1 U_1 x_2 U_2 ... x_N U_N + B
    O = g(H)

with one weight matrix ``U_i`` (``J_i x I_i``) per mode, a bias tensor ``B``
broadcast over the trailing batch mode ``C``, and a component-wise
activation ``g``. The batch mode never receives a mode product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError, StateError
from .tensor_core import as_tensor, mode_dot

ACTIVATIONS = ("identity", "sigmoid", "tanh", "relu", "leaky_relu")


@dataclass(frozen=True)
class Activation:
    """Component-wise nonlinearity ``g`` together with its derivative."""

    kind: str = "identity"
    slope: float = 0.2  # only read by leaky_relu

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}; expected one of {ACTIVATIONS}")

    def __call__(self, h: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return h
        if self.kind == "sigmoid":
            return sigmoid(h)
        if self.kind == "tanh":
            return np.tanh(h)
        if self.kind == "relu":
            return np.maximum(h, 0.0)
        return np.where(h > 0, h, self.slope * h)

    def derivative(self, h: np.ndarray) -> np.ndarray:
        """``g'(h)``, evaluated at pre-activation values."""
        if self.kind == "identity":
            return np.ones_like(h)
        if self.kind == "sigmoid":
            s = sigmoid(h)
            return s * (1.0 - s)
        if self.kind == "tanh":
            return 1.0 - np.tanh(h) ** 2
        if self.kind == "relu":
            return (h > 0).astype(np.float64)
        return np.where(h > 0, 1.0, self.slope)

    def to_dict(self) -> dict:
        if self.kind == "leaky_relu":
            return {"kind": self.kind, "slope": self.slope}
        return {"kind": self.kind}

    @classmethod
    def parse(cls, spec) -> "Activation":
        """Build from ``"tanh"``, ``"leaky_relu(0.1)"`` or ``{"kind": ..., "slope": ...}``."""
        if isinstance(spec, Activation):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], float(spec.get("slope", 0.2)))
        spec = str(spec).strip()
        if spec.endswith(")") and "(" in spec:
            kind, arg = spec[:-1].split("(", 1)
            return cls(kind.strip(), float(arg))
        return cls(spec)


def sigmoid(h: np.ndarray) -> np.ndarray:
    # tanh form does not overflow for large |h|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(h)))


@dataclass
class TensorLayer:
    weights: list[np.ndarray]
    bias: np.ndarray
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        self.weights = [np.asarray(u, dtype=np.float64) for u in self.weights]
        self.bias = as_tensor(self.bias)
        if len(self.weights) != self.bias.ndim:
            raise ShapeError(
                f"{len(self.weights)} weight matrices but a bias of order {self.bias.ndim}"
            )
        for i, u in enumerate(self.weights):
            if u.ndim != 2 or u.shape[0] != self.bias.shape[i]:
                raise ShapeError(
                    f"weight {i + 1} has shape {u.shape}; expected {self.bias.shape[i]} rows"
                )

    @property
    def order(self) -> int:
        return len(self.weights)

    @property
    def in_shape(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for u in self.weights)

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.bias.shape

    def params(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: weights by mode, then bias."""
        return [*self.weights, self.bias]

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def forward(self, x: np.ndarray) -> "LayerCache":
        return forward(self, x)

    def backward(self, cache: "LayerCache", upstream: np.ndarray) -> "LayerGradients":
        return backward(self, cache, upstream)


@dataclass
class LayerCache:
    layer: object
    input: np.ndarray
    pre_activation: np.ndarray
    output: np.ndarray


@dataclass
class LayerGradients:
    d_weights: list[np.ndarray]
    d_bias: np.ndarray
    d_input: np.ndarray

    def params(self) -> list[np.ndarray]:
        """Gradients in the same order as the layer's ``params()``."""
        return [*self.d_weights, self.d_bias]


def forward(layer: TensorLayer, x: np.ndarray) -> LayerCache:
    x = as_tensor(x)
    n = layer.order
    if x.ndim != n + 1 or x.shape[:n] != layer.in_shape:
        raise ShapeError(
            f"layer expects input of shape {layer.in_shape} + (batch,), got {x.shape}"
        )
    h = x
    for axis, u in enumerate(layer.weights):
        h = mode_dot(h, u, axis)
    h = h + layer.bias[..., None]
    return LayerCache(layer, x, h, layer.activation(h))


def backward(layer: TensorLayer, cache: LayerCache, upstream: np.ndarray) -> LayerGradients:
    """Gradients of a scalar loss given ``upstream = dLoss/dOutput``.

    Parameter gradients are summed over the batch mode. The Kronecker
    matrices of the textbook form are never built: projecting ``delta``
    through ``U_j^T`` on every mode but ``i`` and contracting with the mode-i
    unfolding of the input gives the same ``J_i x I_i`` matrix.
    """
    if cache.layer is not layer:
        raise StateError("cache was produced by a different layer")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.output.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != output shape {cache.output.shape}")

    delta = upstream * layer.activation.derivative(cache.pre_activation)
    n = layer.order
    transposed = [u.T for u in layer.weights]

    d_weights = []
    for i in range(n):
        projected = delta
        for j in range(n):
            if j != i:
                projected = mode_dot(projected, transposed[j], j)
        # contract every mode except i, batch included
        others = [k for k in range(n + 1) if k != i]
        d_weights.append(np.tensordot(projected, cache.input, axes=(others, others)))
    d_bias = delta.sum(axis=-1)
    d_input = delta
    for j, w in enumerate(transposed):
        d_input = mode_dot(d_input, w, j)
    return LayerGradients(d_weights, d_bias, d_input)


def init_layer(
    input_extents: Sequence[int],
    output_extents: Sequence[int],
    activation: Activation | str = "identity",
    rng: np.random.Generator | int | None = None,
) -> TensorLayer:
    """Glorot-uniform weights per mode, zero bias."""
    input_extents = tuple(int(d) for d in input_extents)
    output_extents = tuple(int(d) for d in output_extents)
    if len(input_extents) != len(output_extents):
        raise ShapeError(f"order mismatch: {input_extents} -> {output_extents}")
    if min(input_extents + output_extents, default=0) < 1:
        raise ShapeError("extents must be >= 1")
    rng = np.random.default_rng(rng)
    weights = []
    for i, j in zip(input_extents, output_extents):
        s = math.sqrt(6.0 / (i + j))
        weights.append(rng.uniform(-s, s, size=(j, i)))
    return TensorLayer(weights, np.zeros(output_extents), Activation.parse(activation))


def param_count_tensor(
    input_extents: Sequence[int],
    hidden_extents: Sequence[int],
    output_extents: Sequence[int],
) -> int:
    """Parameters of a two-transition tensor network ``I -> J -> K``.

    ``sum_i (I_i J_i + J_i K_i) + prod(J) + prod(K)``: both sets of weight
    matrices plus both bias tensors.
    """
    orders = {len(input_extents), len(hidden_extents), len(output_extents)}
    if len(orders) != 1:
        raise ShapeError("input, hidden and output extents must share one order")
    dims = [tuple(int(d) for d in e) for e in (input_extents, hidden_extents, output_extents)]
    if min(min(d) for d in dims) < 1:
        raise ShapeError("extents must be >= 1")
    ins, hid, out = dims
    weights = sum(i * j + j * k for i, j, k in zip(ins, hid, out))
    return weights + math.prod(hid) + math.prod(out)


def param_count_dense(i: int, j: int, k: int) -> int:
    """Parameters of a dense ``I -> J -> K`` MLP: ``J (I + K) + J + K``."""
    return j * (i + k) + j + k
