"""The two-level action tokenizer model.

Pipeline per action row::

    x -> encoder -> psi (Lipschitz) -> quantize on Z -> omega (Lipschitz)
      -> quantize on A -> spatial decoder -> x_hat
                     \\-> temporal decoder (fed by omega's output) -> t_hat

Both quantizers use the straight-through estimator, so reconstruction
gradients reach every network upstream of them. Codebooks learn only from
their codebook losses.
"""
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from . import hvq
from .errors import ConfigError, HistatError, NumericError, ShapeError
from .lipnet import init_lipnet, lip_backward, lip_forward, lip_reg_grad, lip_reg_loss
from .tensorcore import as_matrix, init_mlp, mlp_backward, mlp_forward, mse, mse_grad

LOSS_NAMES = ("commit_Z", "codebook_Z", "commit_A", "codebook_A", "spat", "temp", "reg_Z", "reg_A")


class StaleStateError(HistatError):
    """Backward was called with a forward state from older parameters."""


@dataclass
class ModelConfig:
    d_feature: int = 7
    d_hidden: int = 128
    d_latent: int = 32
    encoder_hidden: tuple = (128, 128)
    lip_layers_psi: tuple = (32, 32)
    lip_layers_omega: tuple = (32, 32)
    temporal_decoder_hidden: tuple = (64, 64)
    alpha_k: int = 64
    k: int = 16
    lambda_vq: float = 1.0
    lambda_spat: float = 1.0
    lambda_temp: float = 0.02
    lambda_reg: float = 1e-6
    hierarchical: bool = True
    temporal: bool = True
    seed: int = 0
    codebook_init_std: float = 0.02

    def __post_init__(self):
        for name in ("encoder_hidden", "lip_layers_psi", "lip_layers_omega", "temporal_decoder_hidden"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))
        self.validate()

    def validate(self):
        dims = [self.d_feature, self.d_hidden, self.d_latent, self.k, self.alpha_k]
        dims += list(self.encoder_hidden) + list(self.lip_layers_psi)
        dims += list(self.lip_layers_omega) + list(self.temporal_decoder_hidden)
        if any(int(d) < 1 for d in dims):
            raise ConfigError("all dimensions and codebook sizes must be >= 1")
        if not self.alpha_k >= self.k >= 1:
            raise ConfigError(f"need alpha_k >= k >= 1, got ({self.alpha_k}, {self.k})")
        for name in ("lambda_vq", "lambda_spat", "lambda_temp", "lambda_reg", "codebook_init_std"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("lip_layers_psi", "lip_layers_omega"):
            widths = getattr(self, name)
            if not widths or widths[-1] != self.d_latent:
                raise ConfigError(f"{name} must be non-empty and end at d_latent={self.d_latent}")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    commit_Z: float = 0.0
    codebook_Z: float = 0.0
    commit_A: float = 0.0
    codebook_A: float = 0.0
    spat: float = 0.0
    temp: float = 0.0
    reg_Z: float = 0.0
    reg_A: float = 0.0
    total: float = 0.0

    def components(self):
        return {name: getattr(self, name) for name in LOSS_NAMES}


def loss_coefficients(config):
    """Weight of each loss component in the total; disabled parts get 0."""
    hier = 1.0 if config.hierarchical else 0.0
    return {
        "commit_Z": config.lambda_vq,
        "codebook_Z": config.lambda_vq,
        "commit_A": config.lambda_vq * hier,
        "codebook_A": config.lambda_vq * hier,
        "spat": config.lambda_spat,
        "temp": config.lambda_temp if config.temporal else 0.0,
        "reg_Z": config.lambda_reg,
        "reg_A": config.lambda_reg * hier,
    }


def total_loss(losses, config):
    """Weighted sum of the loss components."""
    lv, ls, lt, lr = config.lambda_vq, config.lambda_spat, config.lambda_temp, config.lambda_reg
    vq = (losses.commit_Z + losses.codebook_Z) + (losses.commit_A + losses.codebook_A)
    return lv * vq + ls * losses.spat + lt * losses.temp + lr * (losses.reg_Z + losses.reg_A)


class TokenPair(NamedTuple):
    j_star: int
    i_star: int


@dataclass
class Tokens:
    """Per-row subcluster (``j_star``) and cluster (``i_star``) indices.

    ``i_star`` is None for flat models.
    """

    j_star: np.ndarray
    i_star: np.ndarray = None

    def __len__(self):
        return len(self.j_star)

    def __iter__(self):
        for k in range(len(self.j_star)):
            yield TokenPair(int(self.j_star[k]), -1 if self.i_star is None else int(self.i_star[k]))


@dataclass
class ForwardState:
    X: np.ndarray
    T: np.ndarray
    V: np.ndarray
    V_lip: np.ndarray
    QZ: np.ndarray
    QZ_ste: np.ndarray
    QZ_lip: np.ndarray
    QA: np.ndarray
    QA_ste: np.ndarray
    X_hat: np.ndarray
    T_hat: np.ndarray
    assign_Z: hvq.Assignment
    assign_A: hvq.Assignment
    losses: LossBreakdown
    weights: np.ndarray = None
    version: int = 0
    caches: dict = field(default_factory=dict, repr=False)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}", component=what)


class HiSTAT:
    """Tokenizer parameters plus forward/backward passes."""

    def __init__(self, config=None):
        self.config = config if config is not None else ModelConfig()
        self.config.validate()
        cfg = self.config
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(7)]
        # every part is always built so flat and hierarchical models share their init
        self.encoder = init_mlp(rngs[0], [cfg.d_feature, *cfg.encoder_hidden, cfg.d_hidden])
        self.psi = init_lipnet(rngs[1], [cfg.d_hidden, *cfg.lip_layers_psi])
        self.codebook_Z = hvq.init_codebook(rngs[2], cfg.alpha_k, cfg.d_latent, "Z", cfg.codebook_init_std)
        self.omega = init_lipnet(rngs[3], [cfg.d_latent, *cfg.lip_layers_omega])
        self.codebook_A = hvq.init_codebook(rngs[4], cfg.k, cfg.d_latent, "A", cfg.codebook_init_std)
        self.spatial_decoder = init_mlp(
            rngs[5], [cfg.d_latent, *reversed(cfg.encoder_hidden), cfg.d_feature])
        self.temporal_decoder = init_mlp(rngs[6], [cfg.d_latent, *cfg.temporal_decoder_hidden, 1])
        self.version = 0

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self):
        """``(name, value)`` in checkpoint order; Lipschitz bounds are floats."""
        yield from self.encoder.parameters("theta")
        yield from self.psi.parameters("psi")
        yield "Z", self.codebook_Z.entries
        yield from self.omega.parameters("omega")
        yield "A", self.codebook_A.entries
        yield from self.spatial_decoder.parameters("spat")
        yield from self.temporal_decoder.parameters("temp")

    def param_shapes(self):
        return [(name, np.shape(value)) for name, value in self.named_parameters()]

    def num_parameters(self):
        return sum(int(np.prod(shape)) for _, shape in self.param_shapes())

    def get_flat(self):
        parts = [np.ravel(np.asarray(v, dtype=np.float64)) for _, v in self.named_parameters()]
        return np.concatenate(parts)

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_parameters(),):
            raise ShapeError(f"flat parameter vector has {vec.size} entries, "
                             f"expected {self.num_parameters()}")
        off = 0
        for net in (self.encoder, self.psi, "Z", self.omega, "A",
                    self.spatial_decoder, self.temporal_decoder):
            if net == "Z" or net == "A":
                cb = self.codebook_Z if net == "Z" else self.codebook_A
                n = cb.entries.size
                cb.entries = vec[off : off + n].reshape(cb.entries.shape).copy()
                off += n
                continue
            for layer in net.layers:
                n = layer.weight.size
                layer.weight = vec[off : off + n].reshape(layer.weight.shape).copy()
                off += n
                n = layer.bias.size
                layer.bias = vec[off : off + n].copy()
                off += n
                if hasattr(layer, "c"):
                    layer.c = float(vec[off])
                    off += 1
        self.version += 1

    def flatten_grads(self, grads):
        return np.concatenate([np.ravel(np.asarray(grads[name], dtype=np.float64))
                               for name, _ in self.named_parameters()])

    # -- forward / backward -------------------------------------------------

    def forward(self, batch, weights=None, surrogate=None):
        """Run the full pipeline on ``batch`` and compute every loss.

        Args:
            batch: a :class:`~histat.synthdata.TrajectoryBatch` (or any object
                with ``X`` and ``T``).
            weights: optional per-row multipliers for the row-wise losses.
            surrogate: optional :class:`ForwardState` from a base point. When
                given, every stop-gradient operand is frozen at its base value:
                straight-through outputs become ``input + (q0 - input0)``,
                commitment targets are the base prototypes and codebook targets
                the base latents. The result is a smooth function whose
                derivative at the base point is what :meth:`backward` returns;
                gradient checking differentiates it numerically.
        """
        cfg = self.config
        X = as_matrix(batch.X, "X")
        T = np.asarray(batch.T, dtype=np.float64).reshape(-1, 1)
        if X.shape[1] != cfg.d_feature:
            raise ShapeError(f"actions have {X.shape[1]} columns, model expects {cfg.d_feature}")
        if T.shape[0] != X.shape[0]:
            raise ShapeError("timestamps and actions disagree in length")
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)
        caches = {}
        V, caches["theta"] = mlp_forward(self.encoder, X)
        V_lip, caches["psi"] = lip_forward(self.psi, V)
        _check_finite(V_lip, "latents")
        assign_Z = hvq.assign(self.codebook_Z, V_lip)
        QZ = assign_Z.quantized
        sg = surrogate
        if sg is None:
            QZ_ste = hvq.ste_forward(V_lip, QZ)
        else:
            QZ_ste = V_lip + (sg.QZ - sg.V_lip)

        losses = LossBreakdown()
        losses.commit_Z, d_commit_Z = hvq.commit_loss(V_lip, QZ if sg is None else sg.QZ, weights)
        losses.codebook_Z, d_book_Z = hvq.codebook_loss(
            V_lip if sg is None else sg.V_lip, assign_Z, cfg.alpha_k, weights)
        losses.reg_Z = lip_reg_loss(self.psi)

        QZ_lip = QA = QA_ste = assign_A = None
        d_commit_A = d_book_A = None
        if cfg.hierarchical:
            QZ_lip, caches["omega"] = lip_forward(self.omega, QZ_ste)
            _check_finite(QZ_lip, "lipschitz prototypes")
            assign_A = hvq.assign(self.codebook_A, QZ_lip)
            QA = assign_A.quantized
            if sg is None:
                QA_ste = hvq.ste_forward(QZ_lip, QA)
            else:
                QA_ste = QZ_lip + (sg.QA - sg.QZ_lip)
            losses.commit_A, d_commit_A = hvq.commit_loss(QZ_lip, QA if sg is None else sg.QA, weights)
            losses.codebook_A, d_book_A = hvq.codebook_loss(
                QZ_lip if sg is None else sg.QZ_lip, assign_A, cfg.k, weights)
            losses.reg_A = lip_reg_loss(self.omega)
            spat_in, temp_in = QA_ste, QZ_lip
        else:
            spat_in = temp_in = QZ_ste

        X_hat, caches["spat"] = mlp_forward(self.spatial_decoder, spat_in)
        T_hat, caches["temp"] = mlp_forward(self.temporal_decoder, temp_in)
        _check_finite(X_hat, "reconstructed actions")
        _check_finite(T_hat, "predicted timestamps")
        losses.spat = mse(X_hat, X, weights)
        if cfg.temporal:
            losses.temp = mse(T_hat, T, weights)
        losses.total = total_loss(losses, cfg)
        if not np.isfinite(losses.total):
            bad = next((n for n in LOSS_NAMES if not np.isfinite(getattr(losses, n))), "total")
            raise NumericError(f"non-finite loss component {bad}", component=bad)

        caches["vq"] = (d_commit_Z, d_book_Z, d_commit_A, d_book_A)
        return ForwardState(X, T, V, V_lip, QZ, QZ_ste, QZ_lip, QA, QA_ste, X_hat, T_hat[:, 0],
                            assign_Z, assign_A, losses, weights, self.version, caches)

    def backward(self, state, coefficients=None):
        """Gradients of the weighted loss for every parameter.

        ``coefficients`` overrides the per-component weights (see
        :func:`loss_coefficients`), e.g. to isolate a single loss term.

        Returns:
            dict mapping parameter name to gradient (floats for bounds).
        """
        if state.version != self.version:
            raise StaleStateError("forward state is stale; parameters changed since forward")
        cfg = self.config
        coef = loss_coefficients(cfg)
        if coefficients is not None:
            unknown = set(coefficients) - set(coef)
            if unknown:
                raise ConfigError(f"unknown loss components {sorted(unknown)}")
            coef.update(coefficients)
        if not cfg.hierarchical:
            coef.update(commit_A=0.0, codebook_A=0.0, reg_A=0.0)
        if not cfg.temporal:
            coef["temp"] = 0.0
        caches = state.caches
        d_commit_Z, d_book_Z, d_commit_A, d_book_A = caches["vq"]
        w = state.weights
        grads = {}

        d_xhat = coef["spat"] * mse_grad(state.X_hat, state.X, w)
        g, d_spat_in = mlp_backward(self.spatial_decoder, caches["spat"], d_xhat)
        _store_mlp(grads, "spat", g)
        d_that = coef["temp"] * mse_grad(state.T_hat[:, None], state.T, w)
        g, d_temp_in = mlp_backward(self.temporal_decoder, caches["temp"], d_that)
        _store_mlp(grads, "temp", g)

        if cfg.hierarchical:
            d_qz_lip = d_temp_in + hvq.ste_backward(d_spat_in) + coef["commit_A"] * d_commit_A
            grads["A"] = coef["codebook_A"] * d_book_A
            g, d_qz = lip_backward(self.omega, caches["omega"], d_qz_lip)
            _store_lip(grads, "omega", g, coef["reg_A"] * np.asarray(lip_reg_grad(self.omega)))
        else:
            d_qz = d_spat_in + d_temp_in
            grads["A"] = np.zeros_like(self.codebook_A.entries)
            _zero_lip(grads, "omega", self.omega)
        grads["Z"] = coef["codebook_Z"] * d_book_Z
        d_vlip = hvq.ste_backward(d_qz) + coef["commit_Z"] * d_commit_Z
        g, d_v = lip_backward(self.psi, caches["psi"], d_vlip)
        _store_lip(grads, "psi", g, coef["reg_Z"] * np.asarray(lip_reg_grad(self.psi)))
        g, _ = mlp_backward(self.encoder, caches["theta"], d_v, need_input_grad=False)
        _store_mlp(grads, "theta", g)
        return grads

    # -- tokens -------------------------------------------------------------

    def tokenize(self, actions):
        """Map action rows to ``(Tokens, quantized)``.

        ``quantized`` holds the codebook-A prototypes (codebook-Z for flat
        models) that the spatial decoder consumes.
        """
        X = as_matrix(actions, "actions")
        if X.shape[1] != self.config.d_feature:
            raise ShapeError(f"actions have {X.shape[1]} columns, model expects {self.config.d_feature}")
        V, _ = mlp_forward(self.encoder, X)
        V_lip, _ = lip_forward(self.psi, V)
        az = hvq.assign(self.codebook_Z, V_lip)
        if not self.config.hierarchical:
            return Tokens(az.indices), az.quantized
        QZ_lip, _ = lip_forward(self.omega, az.quantized)
        aa = hvq.assign(self.codebook_A, QZ_lip)
        return Tokens(az.indices, aa.indices), aa.quantized

    def detokenize(self, tokens):
        """Decode tokens back to actions with the spatial decoder."""
        if not isinstance(tokens, Tokens):
            pairs = list(tokens)
            tokens = Tokens(np.array([p[0] for p in pairs], dtype=np.int64),
                            np.array([p[1] for p in pairs], dtype=np.int64))
        if self.config.hierarchical:
            if tokens.i_star is None:
                raise ShapeError("hierarchical detokenize needs i_star")
            idx, cb = np.asarray(tokens.i_star), self.codebook_A
        else:
            idx, cb = np.asarray(tokens.j_star), self.codebook_Z
        if idx.size and (idx.min() < 0 or idx.max() >= cb.n_codes):
            raise HistatError(f"token index out of range [0, {cb.n_codes})")
        X_hat, _ = mlp_forward(self.spatial_decoder, cb.entries[idx.astype(np.int64)])
        return X_hat

    def hierarchy_map(self):
        """Cluster index of every subcluster prototype, shape ``(alpha_k,)``."""
        if not self.config.hierarchical:
            raise ConfigError("flat models have no subcluster-to-cluster map")
        mapped, _ = lip_forward(self.omega, self.codebook_Z.entries)
        return hvq.assign(self.codebook_A, mapped).indices


def _store_mlp(grads, prefix, layer_grads):
    for i, (dw, db) in enumerate(layer_grads):
        grads[f"{prefix}.{i}.weight"] = dw
        grads[f"{prefix}.{i}.bias"] = db


def _store_lip(grads, prefix, layer_grads, reg_grads):
    for i, (dw, db, dc) in enumerate(layer_grads):
        grads[f"{prefix}.{i}.weight"] = dw
        grads[f"{prefix}.{i}.bias"] = db
        grads[f"{prefix}.{i}.c"] = dc + float(reg_grads[i])


def _zero_lip(grads, prefix, net):
    for i, layer in enumerate(net.layers):
        grads[f"{prefix}.{i}.weight"] = np.zeros_like(layer.weight)
        grads[f"{prefix}.{i}.bias"] = np.zeros_like(layer.bias)
        grads[f"{prefix}.{i}.c"] = 0.0
