"""Two-level vector quantization: codebooks, assignment and the VQ losses."""
from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .errors import HistatError, ShapeError
from .tensorcore import as_matrix, mse, mse_grad

LEVELS = ("Z", "A")


@dataclass
class Codebook:
    entries: np.ndarray  # (n_codes, d_latent)
    level: str = "Z"

    def __post_init__(self):
        self.entries = as_matrix(self.entries, "codebook")
        if self.level not in LEVELS:
            raise ValueError(f"unknown codebook level {self.level!r}")

    @property
    def n_codes(self):
        return self.entries.shape[0]

    @property
    def dim(self):
        return self.entries.shape[1]


@dataclass
class Assignment:
    indices: np.ndarray  # (n,) int64
    quantized: np.ndarray  # (n, d_latent), rows copied from the codebook


def init_codebook(rng, n_codes, dim, level, scale=0.02):
    return Codebook(rng.normal(0.0, scale, size=(n_codes, dim)), level)


def assign(cb, v):
    """Nearest prototype per row by squared L2 distance, lowest index on ties."""
    v = as_matrix(v, "v")
    if cb.n_codes == 0:
        raise ShapeError("cannot assign against an empty codebook")
    if v.shape[1] != cb.dim:
        raise ShapeError(f"latent width {v.shape[1]} != codebook width {cb.dim}")
    idx = kernels.nearest_rows(v, cb.entries)
    return Assignment(idx, cb.entries[idx])


def ste_forward(v, q):
    """Straight-through quantization: the value is ``q``."""
    v = as_matrix(v, "v")
    q = as_matrix(q, "q")
    if v.shape != q.shape:
        raise ShapeError(f"ste: {v.shape} vs {q.shape}")
    return q.copy()


def ste_backward(d_out):
    """The quantizer is treated as identity, so the gradient passes unchanged to ``v``."""
    return d_out


def commit_loss(v, q, weights=None):
    """``mean_k ||v_k - sg(q_k)||^2``; returns ``(value, d_v)``."""
    value = mse(v, q, weights)
    return value, mse_grad(v, q, weights)


def codebook_loss(v, assignment, n_codes, weights=None):
    """``mean_k ||sg(v_k) - q_k||^2``; returns ``(value, d_codebook)``.

    The gradient is scattered onto the assigned codebook rows; nothing flows
    back to ``v``.
    """
    q = assignment.quantized
    value = mse(q, v, weights)
    d_codebook = kernels.scatter_add_rows(assignment.indices, mse_grad(q, v, weights), n_codes)
    return value, d_codebook


def vq_level_loss(v, assignment, n_codes, weights=None):
    """Commitment plus codebook loss for one level.

    Returns:
        ``(total, components, d_v, d_codebook)`` with ``components`` a dict
        holding ``commit`` and ``codebook``.
    """
    commit, d_v = commit_loss(v, assignment.quantized, weights)
    book, d_cb = codebook_loss(v, assignment, n_codes, weights)
    return commit + book, {"commit": commit, "codebook": book}, d_v, d_cb


def usage_counts(indices, n_codes):
    return np.bincount(np.asarray(indices, dtype=np.int64), minlength=n_codes)


def perplexity(indices, n_codes):
    """exp of the Shannon entropy of empirical code usage."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise HistatError("perplexity of an empty assignment")
    if indices.min() < 0 or indices.max() >= n_codes:
        raise ShapeError("code index out of range")
    p = usage_counts(indices, n_codes) / indices.size
    p = p[p > 0]
    return math.exp(-float(np.sum(p * np.log(p))))


def utilization(indices, n_codes):
    """Fraction of codes used at least once."""
    return float(np.count_nonzero(usage_counts(indices, n_codes))) / n_codes


def reinit_dead_codes(cb, recent_latents, counts, rng):
    """Reset never-used codes to randomly picked recent latent rows.

    Returns the number of codes reset.
    """
    counts = np.asarray(counts)
    if counts.shape != (cb.n_codes,):
        raise ShapeError(f"usage counts length {counts.shape} != {cb.n_codes}")
    dead = np.flatnonzero(counts == 0)
    if dead.size == 0:
        return 0
    recent_latents = as_matrix(recent_latents, "recent_latents")
    if recent_latents.shape[0] == 0:
        raise HistatError("dead codes present but no recent latents to reinitialize from")
    picks = rng.integers(0, recent_latents.shape[0], size=dead.size)
    cb.entries[dead] = recent_latents[picks]
    return int(dead.size)
