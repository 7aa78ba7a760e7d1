"""Layer composition, losses, optimizers and finite-difference gradient checks.

Every layer consumes and produces arrays whose last axis is the batch. A
dense layer sees ``(I, C)`` matrices; when a tensor-shaped activation meets a
dense layer (or the other way round) it is reshaped in the canonical
first-index-fastest order, so ``vec`` of a tensor sample is the column a
dense layer sees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ShapeError, StateError
from .tensor_layer import (
    Activation,
    LayerCache,
    LayerGradients,
    TensorLayer,
    init_layer,
    sigmoid,
)


@dataclass
class DenseLayer:
    """Affine map plus activation, ``y = g(W x + b)``."""

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias of shape {self.bias.shape} does not match weight {self.weight.shape}"
            )

    @property
    def in_shape(self) -> tuple[int, ...]:
        return (self.weight.shape[1],)

    @property
    def out_shape(self) -> tuple[int, ...]:
        return (self.weight.shape[0],)

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def num_params(self) -> int:
        return self.weight.size + self.bias.size

    def forward(self, x: np.ndarray) -> LayerCache:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.weight.shape[1]:
            raise ShapeError(f"dense layer expects ({self.weight.shape[1]}, batch), got {x.shape}")
        h = self.weight @ x + self.bias[:, None]
        return LayerCache(self, x, h, self.activation(h))

    def backward(self, cache: LayerCache, upstream: np.ndarray) -> LayerGradients:
        if cache.layer is not self:
            raise StateError("cache was produced by a different layer")
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != cache.output.shape:
            raise ShapeError(f"upstream shape {upstream.shape} != output shape {cache.output.shape}")
        delta = upstream * self.activation.derivative(cache.pre_activation)
        return LayerGradients([delta @ cache.input.T], delta.sum(axis=1), self.weight.T @ delta)


def init_dense(n_in: int, n_out: int, activation: Activation | str = "identity",
               rng: np.random.Generator | int | None = None) -> DenseLayer:
    rng = np.random.default_rng(rng)
    s = math.sqrt(6.0 / (n_in + n_out))
    return DenseLayer(rng.uniform(-s, s, size=(n_out, n_in)), np.zeros(n_out),
                      Activation.parse(activation))


Layer = Union[TensorLayer, DenseLayer]


def _reshape_batch(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if x.shape[:-1] == shape:
        return x
    return np.reshape(x, shape + (x.shape[-1],), order="F")


class Network:
    """An ordered stack of tensor and/or dense layers."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            both_tensor = isinstance(a, TensorLayer) and isinstance(b, TensorLayer)
            if both_tensor and a.out_shape != b.in_shape:
                raise ShapeError(
                    f"layer {k} outputs {a.out_shape} but layer {k + 1} expects {b.in_shape}"
                )
            if math.prod(a.out_shape) != math.prod(b.in_shape):
                raise ShapeError(
                    f"layer {k} outputs {math.prod(a.out_shape)} values "
                    f"but layer {k + 1} expects {math.prod(b.in_shape)}"
                )

    def __repr__(self):
        parts = [f"{type(l).__name__}{l.in_shape}->{l.out_shape}" for l in self.layers]
        return f"Network({', '.join(parts)})"

    @property
    def in_shape(self) -> tuple[int, ...]:
        return self.layers[0].in_shape

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.layers[-1].out_shape

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def param_names(self) -> list[str]:
        names = []
        for k, layer in enumerate(self.layers):
            if isinstance(layer, TensorLayer):
                names += [f"layer{k}.U{i + 1}" for i in range(layer.order)]
            else:
                names.append(f"layer{k}.W")
            names.append(f"layer{k}.bias")
        return names

    def num_params(self) -> int:
        return sum(layer.num_params() for layer in self.layers)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[LayerCache]]:
        return net_forward(self, x)

    def backward(self, caches: list[LayerCache], d_output: np.ndarray) -> list[LayerGradients]:
        return net_backward(self, caches, d_output)


def net_forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, list[LayerCache]]:
    """Run every layer in order; returns the output and per-layer caches."""
    x = np.asarray(x, dtype=np.float64)
    caches = []
    for k, layer in enumerate(net.layers):
        if x.ndim < 2 or math.prod(x.shape[:-1]) != math.prod(layer.in_shape):
            raise ShapeError(f"layer {k} expects {layer.in_shape} + (batch,), got {x.shape}")
        cache = layer.forward(_reshape_batch(x, layer.in_shape))
        caches.append(cache)
        x = cache.output
    return x, caches


def net_backward(net: Network, caches: list[LayerCache], d_output: np.ndarray) -> list[LayerGradients]:
    """Reverse-mode chain rule through the stack.

    Each layer's ``d_input`` becomes the previous layer's upstream gradient.
    The first layer's ``d_input`` is the gradient with respect to the
    network input, which is what a generator needs from its discriminator.
    """
    if len(caches) != len(net.layers) or any(c.layer is not l for c, l in zip(caches, net.layers)):
        raise StateError("caches do not come from a forward pass of this network")
    grads: list[LayerGradients] = [None] * len(net.layers)
    upstream = np.asarray(d_output, dtype=np.float64)
    for k in reversed(range(len(net.layers))):
        layer, cache = net.layers[k], caches[k]
        if upstream.size != cache.output.size:
            raise ShapeError(f"gradient for layer {k} has {upstream.size} entries, "
                             f"expected {cache.output.size}")
        upstream = np.reshape(upstream, cache.output.shape, order="F")
        grads[k] = layer.backward(cache, upstream)
        upstream = grads[k].d_input
    return grads


def flat_grads(grads: list[LayerGradients]) -> list[np.ndarray]:
    """Parameter gradients in ``Network.params()`` order."""
    return [g for lg in grads for g in lg.params()]


# -- losses -----------------------------------------------------------------

LOSSES = ("bce_logits", "gan_generator_nonsaturating", "gan_generator_minimax", "mse")


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def loss_and_grad(kind: str, values: np.ndarray, targets: np.ndarray | None = None
                  ) -> tuple[float, np.ndarray]:
    """Scalar loss averaged over all entries, and its gradient w.r.t. ``values``.

    ``bce_logits``
        ``softplus(l) - t*l``, the cross-entropy of ``sigmoid(l)`` against ``t``.
    ``gan_generator_nonsaturating``
        ``-log D = softplus(-l)`` on discriminator logits of fakes.
    ``gan_generator_minimax``
        ``log(1 - D) = -softplus(l)``.
    ``mse``
        ``0.5 * (v - t)**2``; not an adversarial loss, handy for checks.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if kind in ("bce_logits", "mse"):
        if targets is None:
            raise ShapeError(f"{kind} needs targets")
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != values.shape:
            raise ShapeError(f"targets {targets.shape} do not match values {values.shape}")
    if kind == "bce_logits":
        loss = softplus(values) - targets * values
        grad = sigmoid(values) - targets
    elif kind == "gan_generator_nonsaturating":
        loss = softplus(-values)
        grad = sigmoid(values) - 1.0
    elif kind == "gan_generator_minimax":
        loss = -softplus(values)
        grad = -sigmoid(values)
    elif kind == "mse":
        diff = values - targets
        loss = 0.5 * diff * diff
        grad = diff
    else:
        raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES}")
    return float(loss.sum() / n), grad / n


# -- optimizers -------------------------------------------------------------

class Optimizer:
    """Base class; subclasses update parameter arrays in place."""

    def step(self, net: Network, grads: list[LayerGradients] | list[np.ndarray]) -> None:
        params = net.params()
        flat = flat_grads(grads) if grads and isinstance(grads[0], LayerGradients) else list(grads)
        if len(flat) != len(params):
            raise ShapeError(f"{len(flat)} gradients for {len(params)} parameters")
        for p, g in zip(params, flat):
            if p.shape != g.shape:
                raise ShapeError(f"gradient of shape {g.shape} for parameter {p.shape}")
        self._update(params, flat)

    def _update(self, params, grads):
        raise NotImplementedError

    def state_arrays(self) -> list[np.ndarray]:
        return []


class SGD(Optimizer):
    def __init__(self, lr: float = 0.01):
        self.lr = lr

    def _update(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam(Optimizer):
    """Adam with bias-corrected moments, ``p -= lr * m_hat / (sqrt(v_hat) + eps)``."""

    def __init__(self, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def _update(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif [m.shape for m in self.m] != [p.shape for p in params]:
            raise StateError("optimizer state belongs to a different network")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> list[np.ndarray]:
        return [*self.m, *self.v]


def make_optimizer(spec: dict | None) -> Optimizer:
    spec = dict(spec or {})
    kind = spec.pop("kind", "adam")
    if kind == "adam":
        return Adam(**spec)
    if kind == "sgd":
        return SGD(**spec)
    raise ValueError(f"unknown optimizer {kind!r}")


# -- gradient checking ------------------------------------------------------

def rel_error(a, n, floor: float = 1e-7):
    """``|a - n| / max(|a|, |n|, floor)``, element-wise."""
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckReport:
    max_errors: dict[str, float]
    flagged: list[tuple[str, tuple[int, ...], float]]
    tol: float

    @property
    def passed(self) -> bool:
        return not self.flagged

    @property
    def max_error(self) -> float:
        return max(self.max_errors.values(), default=0.0)

    def table(self) -> str:
        width = max(len(k) for k in self.max_errors) if self.max_errors else 5
        lines = [f"{'block':<{width}}  max rel err  status"]
        for name, err in self.max_errors.items():
            status = "ok" if err <= self.tol else "FAIL"
            lines.append(f"{name:<{width}}  {err:11.3e}  {status}")
        return "\n".join(lines)


LossSpec = Union[str, Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]]


def _scalar_loss(loss: LossSpec):
    if callable(loss):
        return loss
    return lambda out, t: loss_and_grad(loss, out, t)


def grad_check(net: Network, x: np.ndarray, targets: np.ndarray | None, loss: LossSpec,
               h: float = 1e-5, tol: float = 1e-4, corrupt: bool = False) -> GradCheckReport:
    """Compare backprop against central differences on every parameter entry.

    ``corrupt`` doubles one analytic gradient entry before comparing; the
    report must then flag it.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    f = _scalar_loss(loss)
    out, caches = net_forward(net, x)
    _, d_out = f(out, targets)
    analytic = flat_grads(net_backward(net, caches, d_out))
    if corrupt:
        analytic = [a.copy() for a in analytic]
        k = int(np.argmax([np.abs(a).max() for a in analytic]))
        idx = np.unravel_index(np.argmax(np.abs(analytic[k])), analytic[k].shape)
        analytic[k][idx] *= 2.0

    max_errors: dict[str, float] = {}
    flagged = []
    for name, p, a in zip(net.param_names(), net.params(), analytic):
        numeric = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            fp = f(net_forward(net, x)[0], targets)[0]
            p[idx] = orig - h
            fm = f(net_forward(net, x)[0], targets)[0]
            p[idx] = orig
            numeric[idx] = (fp - fm) / (2.0 * h)
        err = rel_error(a, numeric)
        max_errors[name] = float(err.max())
        for idx in zip(*np.nonzero(err > tol)):
            flagged.append((name, tuple(int(i) for i in idx), float(err[idx])))
    return GradCheckReport(max_errors, flagged, tol)


def build_network(blocks: Sequence[dict], rng: np.random.Generator | int | None = None) -> Network:
    """Initialize a network from ``[{"kind", "in", "out", "activation"}, ...]`` blocks."""
    rng = np.random.default_rng(rng)
    layers: list[Layer] = []
    for b in blocks:
        if b["kind"] == "tensor":
            layers.append(init_layer(b["in"], b["out"], b.get("activation", "identity"), rng))
        elif b["kind"] == "dense":
            n_in, n_out = math.prod(b["in"]), math.prod(b["out"])
            layers.append(init_dense(n_in, n_out, b.get("activation", "identity"), rng))
        else:
            raise ValueError(f"unknown layer kind {b['kind']!r}")
    return Network(layers)


def block_param_count(block: dict) -> int:
    """Trainable parameters of one layer block, without building it.

    Tensor blocks hold ``sum_i I_i J_i`` weights plus a ``prod(J)`` bias;
    dense blocks hold ``I J + J`` with ``I`` and ``J`` the flattened sizes.
    """
    ins = [int(d) for d in block["in"]]
    outs = [int(d) for d in block["out"]]
    if block["kind"] == "tensor":
        if len(ins) != len(outs):
            raise ValueError(f"tensor block maps order {len(ins)} to order {len(outs)}")
        return sum(i * j for i, j in zip(ins, outs)) + math.prod(outs)
    if block["kind"] == "dense":
        return math.prod(ins) * math.prod(outs) + math.prod(outs)
    raise ValueError(f"unknown layer kind {block['kind']!r}")


def blocks_param_count(blocks: Sequence[dict]) -> int:
    return sum(block_param_count(b) for b in blocks)
