"""Feed-forward ReLU networks: layers, forward passes, conv lowering, init, Adam."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from . import autograd as ag
from .autograd import NonFiniteError, Var, check_finite


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Affine:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class Conv2d:
    kernel: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray    # (out_ch,)
    in_shape: tuple     # (C, H, W)
    stride: int = 1
    padding: int = 0

    @property
    def out_shape(self) -> tuple:
        _, (oh, ow) = ag.conv_patch_index(self.in_shape, self.kernel.shape[2:],
                                          self.stride, self.padding)
        return (self.kernel.shape[0], oh, ow)

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_shape))


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Affine, Conv2d, ReLU, Flatten]
LINEAR_KINDS = (Affine, Conv2d)


@dataclass(frozen=True)
class Network:
    """Ordered layer list.  Activations are always stored row-flattened."""

    layers: tuple
    input_shape: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        _validate(self)

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_layer_sizes(self) -> list[int]:
        sizes, width = [], self.input_dim
        for layer in self.layers:
            if isinstance(layer, LINEAR_KINDS):
                width = layer.out_dim
            elif isinstance(layer, ReLU):
                sizes.append(width)
        return sizes

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if isinstance(layer, Affine):
                out += [layer.w, layer.b]
            elif isinstance(layer, Conv2d):
                out += [layer.kernel, layer.bias]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Network":
        it = iter(params)
        layers = []
        for layer in self.layers:
            if isinstance(layer, Affine):
                layers.append(Affine(np.array(next(it), dtype=float), np.array(next(it), dtype=float)))
            elif isinstance(layer, Conv2d):
                layers.append(replace(layer, kernel=np.array(next(it), dtype=float),
                                      bias=np.array(next(it), dtype=float)))
            else:
                layers.append(layer)
        return Network(layers, self.input_shape, dict(self.meta))


def _validate(net: Network) -> None:
    if not net.layers:
        raise ShapeError("network has no layers")
    width = net.input_dim
    prev = None
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            if layer.w.ndim != 2 or layer.b.shape != (layer.w.shape[0],):
                raise ShapeError(f"layer {i}: affine weight/bias shapes {layer.w.shape}/{layer.b.shape}")
            if layer.in_dim != width:
                raise ShapeError(f"layer {i}: affine expects width {layer.in_dim}, got {width}")
            width = layer.out_dim
        elif isinstance(layer, Conv2d):
            if layer.in_dim != width:
                raise ShapeError(f"layer {i}: conv expects {layer.in_shape}, got width {width}")
            if layer.kernel.shape[1] != layer.in_shape[0]:
                raise ShapeError(f"layer {i}: kernel channels {layer.kernel.shape[1]} "
                                 f"!= input channels {layer.in_shape[0]}")
            width = layer.out_dim
        elif isinstance(layer, ReLU):
            if not isinstance(prev, LINEAR_KINDS):
                raise ShapeError(f"layer {i}: ReLU must follow an affine or conv layer")
        elif not isinstance(layer, Flatten):
            raise ShapeError(f"layer {i}: unknown layer {layer!r}")
        prev = layer
    if not isinstance(net.layers[-1], Affine):
        raise ShapeError("final layer must be affine (logits)")


def mlp(sizes: Sequence[int], seed: int = 0) -> Network:
    """Fully connected ReLU net ``sizes[0] -> ... -> sizes[-1]`` with He init."""
    layers: list = []
    for i in range(len(sizes) - 1):
        layers.append(Affine(np.zeros((sizes[i + 1], sizes[i])), np.zeros(sizes[i + 1])))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return init_params(Network(layers, (sizes[0],)), seed)


def init_params(net: Network, seed: int) -> Network:
    """Kaiming-normal weights (std sqrt(2/fan_in)), zero biases; deterministic in seed."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            fan_in = layer.in_dim
            params += [rng.normal(0.0, np.sqrt(2.0 / fan_in), layer.w.shape), np.zeros(layer.out_dim)]
        elif isinstance(layer, Conv2d):
            fan_in = int(np.prod(layer.kernel.shape[1:]))
            params += [rng.normal(0.0, np.sqrt(2.0 / fan_in), layer.kernel.shape),
                       np.zeros(layer.kernel.shape[0])]
    out = net.with_params(params)
    out.meta["seed"] = seed
    return out


@dataclass
class ActivationTrace:
    """Per-layer outputs of one forward pass (row-batched).

    ``values[i]`` is the output of ``layers[i]``; ``pre[j]``/``post[j]`` are the
    inputs/outputs of the j-th ReLU.
    """

    values: list
    pre: list
    post: list

    @property
    def logits(self) -> np.ndarray:
        return self.values[-1]


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape or x.shape == (net.input_dim,):
        return x.reshape(1, -1), True
    if x.ndim >= 2 and int(np.prod(x.shape[1:])) == net.input_dim:
        return x.reshape(x.shape[0], -1), False
    raise ShapeError(f"input shape {x.shape} does not match network input {net.input_shape}")


def forward(net: Network, x) -> ActivationTrace:
    """Plain numpy forward pass; accepts one sample or a batch."""
    h, single = _as_batch(net, x)
    check_finite(h, "input")
    values, pre, post = [], [], []
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = h @ layer.w.T + layer.b
        elif isinstance(layer, Conv2d):
            h = ag.conv2d(Var(h), Var(layer.kernel), Var(layer.bias),
                          layer.in_shape, layer.stride, layer.padding).value
        elif isinstance(layer, ReLU):
            pre.append(h)
            h = np.maximum(h, 0.0)
            post.append(h)
        check_finite(h, "activation")
        values.append(h)
    if single:
        values = [v[0] for v in values]
        pre = [v[0] for v in pre]
        post = [v[0] for v in post]
    return ActivationTrace(values, pre, post)


def logits(net: Network, x) -> np.ndarray:
    return forward(net, x).logits


def predict(net: Network, x) -> np.ndarray:
    return np.argmax(logits(net, x), axis=-1)


@dataclass
class GraphTrace:
    """Differentiable forward pass: ReLU pre-activations and logits as Vars."""

    pre: list
    logits: Var


def forward_graph(net: Network, x: Var, params: Sequence[Var] | None = None) -> GraphTrace:
    if params is None:
        params = [Var(p) for p in net.params()]
    it = iter(params)
    h = x
    pre = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = ag.linear(h, next(it), next(it))
        elif isinstance(layer, Conv2d):
            h = ag.conv2d(h, next(it), next(it), layer.in_shape, layer.stride, layer.padding)
        elif isinstance(layer, ReLU):
            pre.append(h)
            h = ag.relu(h)
    check_finite(h.value, "logits")
    return GraphTrace(pre, h)


def lower_conv_to_affine(layer: Conv2d, input_shape=None) -> Affine:
    """Dense matrix form of a convolution over row-flattened (C, H, W) inputs."""
    in_shape = tuple(input_shape) if input_shape is not None else tuple(layer.in_shape)
    if len(in_shape) != 3:
        raise ShapeError(f"conv lowering needs a (C, H, W) input shape, got {in_shape}")
    idx, (oh, ow) = ag.conv_patch_index(in_shape, layer.kernel.shape[2:], layer.stride, layer.padding)
    o = layer.kernel.shape[0]
    n_in = int(np.prod(in_shape))
    p = oh * ow
    kmat = layer.kernel.reshape(o, -1)
    w = np.zeros((o * p, n_in + 1))
    rows = (np.arange(o)[:, None, None] * p + np.arange(p)[None, :, None])
    rows = np.broadcast_to(rows, (o, p, idx.shape[1]))
    cols = np.broadcast_to(idx[None], (o, p, idx.shape[1]))
    vals = np.broadcast_to(kmat[:, None, :], (o, p, idx.shape[1]))
    np.add.at(w, (rows.ravel(), cols.ravel()), vals.ravel())
    return Affine(w[:, :n_in], np.repeat(layer.bias, p))


@dataclass(frozen=True)
class LoweredNet:
    """Alternating affine/ReLU form used by all analysis code.

    ``weights[k], biases[k]`` produce the k-th pre-activation; a ReLU follows
    every affine except the last.
    """

    weights: tuple
    biases: tuple

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    @property
    def hidden_sizes(self) -> list[int]:
        return [w.shape[0] for w in self.weights[:-1]]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def forward(self, x: np.ndarray) -> tuple[list, np.ndarray]:
        """Pre-activations of each hidden layer and the logits, row-batched."""
        h = np.atleast_2d(x)
        pre = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0)
        return pre, h @ self.weights[-1].T + self.biases[-1]


def lower(net: Network) -> LoweredNet:
    """Lower convs to dense affines and fuse consecutive affine layers."""
    weights, biases = [], []
    cur_w, cur_b = np.eye(net.input_dim), np.zeros(net.input_dim)
    for layer in net.layers:
        if isinstance(layer, (Affine, Conv2d)):
            aff = lower_conv_to_affine(layer) if isinstance(layer, Conv2d) else layer
            cur_w, cur_b = aff.w @ cur_w, aff.w @ cur_b + aff.b
        elif isinstance(layer, ReLU):
            weights.append(cur_w)
            biases.append(cur_b)
            cur_w, cur_b = np.eye(cur_w.shape[0]), np.zeros(cur_w.shape[0])
    weights.append(cur_w)
    biases.append(cur_b)
    return LoweredNet(tuple(weights), tuple(biases))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params: Sequence[np.ndarray]) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new params and state."""
    if len(params) != len(grads):
        raise ShapeError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to adam_step")
    t = state.t + 1
    m = [beta1 * mi + (1 - beta1) * g for mi, g in zip(state.m, grads)]
    v = [beta2 * vi + (1 - beta2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t)
