"""Dense float64 linear algebra and hand-written reverse-mode passes for MLPs.

Matrices are plain 2-D ``numpy.float64`` arrays. Products go through
:mod:`histat.kernels`, which sums every output element left to right over the
shared axis, so results are reproducible to the bit.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .errors import ShapeError

ACTIVATIONS = ("relu", "identity")


def as_matrix(x, name="matrix"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b):
    """Matrix product with a fixed, left-to-right reduction order."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return kernels.matmul(a, b)


def softplus(c):
    """``ln(1 + e^c)`` without overflow for large ``c``."""
    c = float(c)
    if c > 30.0:
        return c + math.log1p(math.exp(-c))
    return math.log1p(math.exp(c))


def sigmoid(c):
    """Derivative of :func:`softplus`."""
    c = float(c)
    if c >= 0:
        return 1.0 / (1.0 + math.exp(-c))
    e = math.exp(c)
    return e / (1.0 + e)


def mse(a, b, weights=None):
    """Mean over rows of the squared L2 distance between matching rows.

    ``weights`` (one per row) scales each row's term; the divisor stays the
    row count.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"mse: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        return 0.0
    d = a - b
    if weights is None:
        return float(np.sum(d * d) / a.shape[0])
    return float(np.sum(np.sum(d * d, axis=1) * weights) / a.shape[0])


def mse_grad(a, b, weights=None):
    """Gradient of ``mse(a, b, weights)`` with respect to ``a``."""
    g = 2.0 * (a - b) / a.shape[0]
    if weights is not None:
        g *= np.asarray(weights)[:, None]
    return g


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_backward(d, z, kind):
    if kind == "relu":
        return d * (z > 0.0)
    return d


def affine(x, weight, bias):
    """``x @ weight.T + bias`` where ``weight`` is (out, in)."""
    y = kernels.matmul(x, np.ascontiguousarray(weight.T))
    y += bias
    return y


def affine_backward(x, weight, d_out, need_input_grad=True):
    """Return ``(d_weight, d_bias, d_x)``; ``d_x`` is None when not requested."""
    d_weight = kernels.matmul_tn(d_out, x)
    d_bias = d_out.sum(axis=0)
    d_x = kernels.matmul(d_out, weight) if need_input_grad else None
    return d_weight, d_bias, d_x


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass
class Mlp:
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
        """Yield ``(name, array)`` pairs in serialization order."""
        for i, layer in enumerate(self.layers):
            yield f"{prefix}.{i}.weight", layer.weight
            yield f"{prefix}.{i}.bias", layer.bias


def check_chain(layers):
    if not layers:
        raise ShapeError("network needs at least one layer")
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_dim != nxt.in_dim:
            raise ShapeError(f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}")
    for layer in layers:
        if layer.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {layer.activation!r}")
        if layer.bias.shape != (layer.out_dim,):
            raise ShapeError(f"bias shape {layer.bias.shape} != ({layer.out_dim},)")
    if layers[-1].activation != "identity":
        raise ShapeError("final layer must use the identity activation")


def init_mlp(rng, widths, zero_last=False):
    """Build an MLP over ``widths`` (input first) with ReLU hidden layers.

    Weights and biases are uniform in ``[-1/sqrt(in), 1/sqrt(in)]``.
    """
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        if last and zero_last:
            w, b = np.zeros_like(w), np.zeros_like(b)
        layers.append(DenseLayer(w, b, "identity" if last else "relu"))
    return Mlp(layers)


def mlp_forward(net, x):
    """Run ``net`` on the rows of ``x``.

    Returns:
        ``(y, cache)`` where ``cache`` holds each layer's input and
        pre-activation, enough for :func:`mlp_backward`.
    """
    x = as_matrix(x, "x")
    if x.shape[1] != net.in_dim:
        raise ShapeError(f"mlp input has {x.shape[1]} columns, expected {net.in_dim}")
    cache = []
    h = x
    for layer in net.layers:
        z = affine(h, layer.weight, layer.bias)
        cache.append((h, z))
        h = _activate(z, layer.activation)
    return h, cache


def mlp_backward(net, cache, d_out, need_input_grad=True):
    """Reverse pass matching :func:`mlp_forward`.

    Returns:
        ``(grads, d_in)`` with ``grads`` a list of ``(d_weight, d_bias)`` per
        layer and ``d_in`` the gradient with respect to the input (or None).
    """
    if len(cache) != len(net.layers):
        raise ShapeError("cache does not belong to this network")
    d = as_matrix(d_out, "d_out")
    if d.shape != cache[-1][1].shape:
        raise ShapeError(f"d_out shape {d.shape} != output shape {cache[-1][1].shape}")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, z = cache[i]
        dz = _activate_backward(d, z, layer.activation)
        want_x = need_input_grad or i > 0
        dw, db, d = affine_backward(h, layer.weight, dz, want_x)
        grads[i] = (dw, db)
    return grads, d
