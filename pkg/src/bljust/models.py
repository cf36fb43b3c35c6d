"""Shared-backbone MLP with a classifier head and a reconstruction head.

The backbone (theta) maps inputs to features; the supervised head (phi) maps
features to class logits and the unsupervised head (eta) maps features back to
input space.  Gradients are derived by hand and laid out on the full
``[theta | phi | eta]`` vector.

Weights are stored row-major with shape ``(fan_in, fan_out)`` and followed by
their bias, so a layer computes ``h @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidState
from .params import ParamVector, Partition

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple = ()
    activation: str = "tanh"
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise InvalidArgument("input_dim must be >= 1")
        if self.num_classes < 2:
            raise InvalidArgument("num_classes must be >= 2")
        if any(h < 1 for h in self.hidden_dims):
            raise InvalidArgument("hidden layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")

    @property
    def recon_dim(self) -> int:
        return self.input_dim

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    def layer_shapes(self):
        dims = (self.input_dim,) + self.hidden_dims
        return list(zip(dims[:-1], dims[1:]))

    @property
    def partition(self) -> Partition:
        d_theta = sum(i * o + o for i, o in self.layer_shapes())
        f = self.feature_dim
        return Partition(d_theta, f * self.num_classes + self.num_classes, f * self.recon_dim + self.recon_dim)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, h):
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        # subgradient at 0 is 0
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def unpack(spec: ModelSpec, data: np.ndarray):
    """Views ``(backbone_layers, (W_sup, b_sup), (W_dec, b_dec))`` into ``data``."""
    layers = []
    pos = 0
    for i, o in spec.layer_shapes():
        W = data[pos:pos + i * o].reshape(i, o)
        pos += i * o
        b = data[pos:pos + o]
        pos += o
        layers.append((W, b))
    heads = []
    for out in (spec.num_classes, spec.recon_dim):
        f = spec.feature_dim
        W = data[pos:pos + f * out].reshape(f, out)
        pos += f * out
        b = data[pos:pos + out]
        pos += out
        heads.append((W, b))
    return layers, heads[0], heads[1]


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    features: np.ndarray = None
    params_tag: bytes = b""


def _check(spec: ModelSpec, params: ParamVector, batch: np.ndarray, width: int):
    if params.partition != spec.partition:
        raise InvalidArgument(f"parameter partition {params.partition} does not match model {spec.partition}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != width:
        raise InvalidArgument(f"expected batch of shape (n, {width}), got {batch.shape}")
    return batch


def forward_backbone(spec: ModelSpec, params: ParamVector, batch):
    x = _check(spec, params, batch, spec.input_dim)
    layers, _, _ = unpack(spec, params.data)
    cache = ForwardCache(params_tag=params.digest())
    h = x
    for W, b in layers:
        z = h @ W + b
        cache.inputs.append(h)
        cache.preacts.append(z)
        h = _act(spec.activation, z)
    cache.features = h
    return h, cache


def head_supervised(spec: ModelSpec, params: ParamVector, features):
    feats = _check(spec, params, features, spec.feature_dim)
    _, (W, b), _ = unpack(spec, params.data)
    return feats @ W + b


def head_unsupervised(spec: ModelSpec, params: ParamVector, features):
    feats = _check(spec, params, features, spec.feature_dim)
    _, _, (W, b) = unpack(spec, params.data)
    return feats @ W + b


def backward(spec: ModelSpec, params: ParamVector, cache: ForwardCache, upstream, head: str):
    """Gradient of a scalar loss w.r.t. all parameters.

    ``upstream`` is d(loss)/d(head output) for ``head`` in ``{"sup", "unsup"}``.
    The segment of the head not on the path stays exactly zero.
    """
    if cache.params_tag != params.digest():
        raise InvalidState("forward cache was computed from different parameters")
    if head not in ("sup", "unsup"):
        raise InvalidArgument(f"unknown head {head!r}")
    upstream = np.asarray(upstream, dtype=np.float64)
    out_dim = spec.num_classes if head == "sup" else spec.recon_dim
    n = cache.features.shape[0]
    if upstream.shape != (n, out_dim):
        raise InvalidArgument(f"upstream shape {upstream.shape} != {(n, out_dim)}")

    grad = np.zeros(spec.partition.total)
    g_layers, g_sup, g_dec = unpack(spec, grad)
    layers, sup, dec = unpack(spec, params.data)
    (gW, gb), (W, _) = (g_sup, sup) if head == "sup" else (g_dec, dec)

    feats = cache.features
    gW[...] = feats.T @ upstream
    gb[...] = upstream.sum(axis=0)
    dh = upstream @ W.T
    outputs = cache.inputs[1:] + [cache.features]
    for (W_l, _), (gW_l, gb_l), h_in, z, h_out in zip(
        reversed(layers), reversed(g_layers), reversed(cache.inputs), reversed(cache.preacts), reversed(outputs)
    ):
        dz = dh * _act_grad(spec.activation, z, h_out)
        gW_l[...] = h_in.T @ dz
        gb_l[...] = dz.sum(axis=0)
        dh = dz @ W_l.T
    return grad


def predict(spec: ModelSpec, params: ParamVector, x) -> np.ndarray:
    feats, _ = forward_backbone(spec, params, x)
    return np.argmax(head_supervised(spec, params, feats), axis=1)
