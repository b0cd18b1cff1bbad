"""Lipschitz-conditioned MLPs.

Each layer carries a trainable scalar ``c``. On every forward pass the raw
weight rows are rescaled to have L1 norm ``softplus(c)``, which caps the
layer's infinity-norm Lipschitz constant at that value (ReLU is 1-Lipschitz).
The normalization sits inside the computation graph, so gradients reach both
the raw weights and ``c``.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .errors import DegenerateRowError, ShapeError
from .tensorcore import (
    DenseLayer,
    _activate,
    _activate_backward,
    affine,
    as_matrix,
    check_chain,
    sigmoid,
    softplus,
)

# softplus(C_UNIT) == 1
C_UNIT = math.log(math.e - 1.0)


@dataclass
class LipschitzLayer(DenseLayer):
    c: float = C_UNIT


@dataclass
class LipschitzNet:
    layers: list = field(default_factory=list)

    def __post_init__(self):
        check_chain(self.layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def parameters(self, prefix):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}.{i}.weight", layer.weight
            yield f"{prefix}.{i}.bias", layer.bias
            yield f"{prefix}.{i}.c", layer.c


def init_lipnet(rng, widths):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        act = "identity" if i == len(widths) - 2 else "relu"
        layers.append(LipschitzLayer(w, b, act, C_UNIT))
    return LipschitzNet(layers)


def _row_l1(weight):
    l1 = np.sum(np.abs(weight), axis=1)
    bad = np.flatnonzero(l1 == 0.0)
    if bad.size:
        raise DegenerateRowError(f"degenerate row {int(bad[0])}: all-zero weights")
    return l1


def normalize_weight(layer):
    """Rescale every raw weight row to L1 norm ``softplus(layer.c)``."""
    l1 = _row_l1(layer.weight)
    return layer.weight * (softplus(layer.c) / l1)[:, None]


def lip_forward(net, x):
    """Forward pass; returns ``(y, cache)``."""
    x = as_matrix(x, "x")
    if x.shape[1] != net.in_dim:
        raise ShapeError(f"lipnet input has {x.shape[1]} columns, expected {net.in_dim}")
    cache = []
    h = x
    for layer in net.layers:
        l1 = _row_l1(layer.weight)
        sp = softplus(layer.c)
        w = layer.weight * (sp / l1)[:, None]
        z = affine(h, w, layer.bias)
        cache.append((h, z, w, l1, sp))
        h = _activate(z, layer.activation)
    return h, cache


def lip_backward(net, cache, d_out, need_input_grad=True):
    """Reverse pass through activations, affine maps and the row rescaling.

    Returns:
        ``(grads, d_in)``; ``grads`` holds ``(d_weight_raw, d_bias, d_c)`` per layer.
    """
    if len(cache) != len(net.layers):
        raise ShapeError("cache does not belong to this network")
    d = as_matrix(d_out, "d_out")
    if d.shape != cache[-1][1].shape:
        raise ShapeError(f"d_out shape {d.shape} != output shape {cache[-1][1].shape}")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, z, w, l1, sp = cache[i]
        dz = _activate_backward(d, z, layer.activation)
        d_wn = kernels.matmul_tn(dz, h)
        d_bias = dz.sum(axis=0)
        if need_input_grad or i > 0:
            d = kernels.matmul(dz, w)
        # w = raw * sp / l1 (row-wise)
        raw = layer.weight
        row_dot = np.sum(d_wn * raw, axis=1)
        d_raw = d_wn * (sp / l1)[:, None] - np.sign(raw) * (sp * row_dot / (l1 * l1))[:, None]
        d_c = float(np.sum(row_dot / l1)) * sigmoid(layer.c)
        grads[i] = (d_raw, d_bias, d_c)
    return grads, (d if need_input_grad else None)


def lip_bound(net):
    """Product of per-layer bounds; caps the infinity-norm Lipschitz constant."""
    out = 1.0
    for layer in net.layers:
        out *= softplus(layer.c)
    return out


def lip_reg_loss(net):
    """Lipschitz regularizer: the product of the per-layer softplus bounds."""
    return lip_bound(net)


def lip_reg_grad(net):
    """Gradient of :func:`lip_reg_loss` with respect to each layer's ``c``."""
    bounds = [softplus(layer.c) for layer in net.layers]
    out = []
    for i, layer in enumerate(net.layers):
        others = 1.0
        for j, b in enumerate(bounds):
            if j != i:
                others *= b
        out.append(others * sigmoid(layer.c))
    return out
