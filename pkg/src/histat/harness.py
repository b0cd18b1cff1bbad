"""Training, evaluation, gradient checking and the ablation grid."""
from dataclasses import dataclass, field, fields, replace
import csv
import io
import logging
import math
import time

import numpy as np

from . import hvq
from .errors import ConfigError, ShapeError
from .model import LOSS_NAMES, HiSTAT, ModelConfig, loss_coefficients
from .synthdata import TrajectoryBatch, normalize_timestamps
from .tensorcore import mse

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "step", "variant", *LOSS_NAMES, "total",
    "perplexity_Z", "perplexity_A", "utilization_Z", "utilization_A", "nmi_Z", "latent_smoothness",
)
ABLATION_EXTRA = ("hierarchical", "temporal", "lambda_temp", "seed", "temp_mse")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"
    log_every: int = 50
    eval_every: int = 500
    dead_code_reinit: bool = True

    def validate(self):
        if self.steps < 0 or self.batch_size < 1 or self.log_every < 1 or self.eval_every < 1:
            raise ConfigError("steps >= 0, batch_size >= 1, log_every >= 1, eval_every >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")


# -- optimizer ----------------------------------------------------------------


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "adam"

    @classmethod
    def create(cls, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, kind="adam"):
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps, kind)


def adam_step(params, grads, opt):
    """One bias-corrected Adam update (plain SGD when ``opt.kind == "sgd"``).

    Returns the updated parameter vector; ``opt`` is advanced in place.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != opt.m.shape:
        raise ShapeError(f"optimizer shapes differ: {params.shape}, {grads.shape}, {opt.m.shape}")
    opt.step += 1
    if opt.kind == "sgd":
        return params - opt.lr * grads
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grads
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grads * grads
    m_hat = opt.m / (1.0 - opt.beta1**opt.step)
    v_hat = opt.v / (1.0 - opt.beta2**opt.step)
    return params - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


# -- metrics ------------------------------------------------------------------


def nmi(labels_true, labels_pred):
    """Normalized mutual information with arithmetic-mean normalization.

    Two constant labelings score 1.0.
    """
    a = np.asarray(labels_true).ravel()
    b = np.asarray(labels_pred).ravel()
    if a.shape != b.shape:
        raise ShapeError("labelings differ in length")
    n = a.size
    if n == 0:
        raise ShapeError("empty labeling")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    pa = table.sum(axis=1) / n
    pb = table.sum(axis=0) / n
    ha = -float(np.sum(pa * np.log(pa)))
    hb = -float(np.sum(pb * np.log(pb)))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = table > 0
    pab = table[nz] / n
    outer = np.outer(pa, pb)[nz]
    mi = float(np.sum(pab * np.log(pab / outer)))
    return min(1.0, max(0.0, mi / (0.5 * (ha + hb))))


def latent_smoothness(latents, seq_len):
    """Mean L2 step between consecutive latents inside each sequence."""
    n, d = latents.shape
    if seq_len < 2 or n == 0:
        return 0.0
    seqs = latents.reshape(n // seq_len, seq_len, d)
    steps = np.linalg.norm(np.diff(seqs, axis=1), axis=2)
    return float(steps.mean())


@dataclass
class MetricsReport:
    spat_mse: float
    temp_mse: float
    perplexity_Z: float
    perplexity_A: float
    utilization_Z: float
    utilization_A: float
    nmi_Z: float
    latent_smoothness: float
    losses: object = None
    history: list = field(default_factory=list)

    def row(self, step, variant):
        r = {"step": step, "variant": variant}
        r.update(self.losses.components())
        r["total"] = self.losses.total
        for name in ("perplexity_Z", "perplexity_A", "utilization_Z", "utilization_A",
                     "nmi_Z", "latent_smoothness"):
            r[name] = getattr(self, name)
        return r


def _state_metrics(model, state, batch):
    cfg = model.config
    iz = state.assign_Z.indices
    out = {
        "perplexity_Z": hvq.perplexity(iz, cfg.alpha_k),
        "utilization_Z": hvq.utilization(iz, cfg.alpha_k),
        "perplexity_A": math.nan,
        "utilization_A": math.nan,
        "nmi_Z": math.nan if batch.labels is None else nmi(batch.labels, iz),
        "latent_smoothness": latent_smoothness(state.V_lip, batch.seq_len),
    }
    if state.assign_A is not None:
        out["perplexity_A"] = hvq.perplexity(state.assign_A.indices, cfg.k)
        out["utilization_A"] = hvq.utilization(state.assign_A.indices, cfg.k)
    return out


def evaluate(model, data):
    """All metrics over the full ``data`` set in one deterministic pass."""
    if data.d_feature != model.config.d_feature:
        raise ShapeError(f"data has {data.d_feature} features, model expects {model.config.d_feature}")
    state = model.forward(data)
    extra = _state_metrics(model, state, data)
    temp_mse = mse(state.T_hat[:, None], state.T)
    return MetricsReport(state.losses.spat, temp_mse, losses=state.losses, **extra)


def batch_row(model, state, batch, step, variant):
    r = {"step": step, "variant": variant}
    r.update(state.losses.components())
    r["total"] = state.losses.total
    r.update(_state_metrics(model, state, batch))
    return r


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    model: HiSTAT
    rows: list
    initial_total: float
    final_total: float
    totals: list


def train(model_config, train_cfg, train_set, eval_set=None, variant="histat", progress=None):
    """Fixed-step training loop; fully determined by the configs and data.

    Logs the training-batch loss breakdown every ``log_every`` steps and the
    held-out metrics every ``eval_every`` steps (variant suffixed ``:eval``).

    Returns:
        :class:`TrainResult` with the trained model and the metric rows.
    """
    train_cfg.validate()
    if train_set.d_feature != model_config.d_feature:
        raise ShapeError(f"training data has {train_set.d_feature} features, "
                         f"config expects {model_config.d_feature}")
    model = HiSTAT(model_config)
    rng = np.random.default_rng(np.random.SeedSequence([model_config.seed, 0xB47C]))
    reinit_rng = np.random.default_rng(np.random.SeedSequence([model_config.seed, 0xDEAD]))
    params = model.get_flat()
    opt = OptimState.create(params.size, train_cfg.lr, train_cfg.beta1, train_cfg.beta2,
                            train_cfg.eps, train_cfg.optimizer)
    B = min(train_cfg.batch_size, train_set.batch)
    order = np.empty(0, dtype=np.int64)
    pos = 0
    rows, totals = [], []
    initial_total = final_total = math.nan
    for step in range(train_cfg.steps):
        if pos + B > order.size:
            order = rng.permutation(train_set.batch)
            pos = 0
        batch = train_set.take(order[pos : pos + B])
        pos += B
        state = model.forward(batch)
        totals.append(state.losses.total)
        if step == 0:
            initial_total = state.losses.total
        final_total = state.losses.total
        if step % train_cfg.log_every == 0:
            rows.append(batch_row(model, state, batch, step, variant))
            if progress:
                progress(step, state.losses)
        grads = model.flatten_grads(model.backward(state))
        params = adam_step(params, grads, opt)
        model.set_flat(params)
        if train_cfg.dead_code_reinit:
            _reinit(model, state, reinit_rng)
            params = model.get_flat()
        if eval_set is not None and (step + 1) % train_cfg.eval_every == 0:
            rows.append(evaluate(model, eval_set).row(step + 1, f"{variant}:eval"))
    if eval_set is not None and train_cfg.steps % train_cfg.eval_every != 0:
        rows.append(evaluate(model, eval_set).row(train_cfg.steps, f"{variant}:eval"))
    return TrainResult(model, rows, initial_total, final_total, totals)


def _reinit(model, state, rng):
    counts = hvq.usage_counts(state.assign_Z.indices, model.config.alpha_k)
    if hvq.reinit_dead_codes(model.codebook_Z, state.V_lip, counts, rng):
        model.version += 1
    if state.assign_A is not None:
        counts = hvq.usage_counts(state.assign_A.indices, model.config.k)
        if hvq.reinit_dead_codes(model.codebook_A, state.QZ_lip, counts, rng):
            model.version += 1


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def rows_to_csv(rows, header=METRICS_HEADER):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_value(r.get(k, "")) for k in header])
    return buf.getvalue()


# -- gradient check -----------------------------------------------------------

MICRO_CONFIG = ModelConfig(
    d_feature=3, d_hidden=4, d_latent=3, encoder_hidden=(4, 4), lip_layers_psi=(3, 3),
    lip_layers_omega=(3, 3), temporal_decoder_hidden=(4, 4), alpha_k=4, k=2,
    lambda_vq=1.0, lambda_spat=1.0, lambda_temp=0.5, lambda_reg=0.1, codebook_init_std=0.5,
)


@dataclass
class GradcheckReport:
    max_rel_err: dict  # parameter group -> max relative error
    n_params: int
    excluded_samples: int
    n_samples: int
    tolerance: float
    seconds: float = 0.0
    max_abs_grad: dict = field(default_factory=dict)  # parameter group -> max |analytic|

    @property
    def passed(self):
        return all(v < self.tolerance for v in self.max_rel_err.values())

    def lines(self):
        out = [f"{g:8s} max_rel_err={e:.3e} {'ok' if e < self.tolerance else 'FAIL'}"
               for g, e in self.max_rel_err.items()]
        out.append(f"excluded_samples={self.excluded_samples}/{self.n_samples} params={self.n_params}")
        return out


def micro_batch(config, seed, batch=2, seq_len=3):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C]))
    X = rng.normal(size=(batch * seq_len, config.d_feature))
    T = np.tile(normalize_timestamps(seq_len), batch)
    return TrajectoryBatch(X, T, seq_len, batch)


def gradcheck(config=None, seed=0, h=1e-5, tolerance=1e-5, batch=2, seq_len=3,
              coefficients=None):
    """Compare :meth:`HiSTAT.backward` against central differences.

    The finite differences evaluate the stop-gradient surrogate (see the
    ``surrogate`` argument of :meth:`HiSTAT.forward`), which is exactly the
    graph the backward pass differentiates.
    Samples whose code assignment flips under any ``+-h`` perturbation are
    masked out of the loss on both sides and counted in the report.

    Per group the error is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
    """
    t0 = time.perf_counter()
    config = replace(config if config is not None else MICRO_CONFIG, seed=seed)
    model = HiSTAT(config)
    data = micro_batch(config, seed, batch, seq_len)
    base = model.forward(data)
    base_z = base.assign_Z.indices
    base_a = None if base.assign_A is None else base.assign_A.indices
    theta0 = model.get_flat()
    n = theta0.size

    def run(vec, weights=None):
        model.set_flat(vec)
        return model.forward(data, weights=weights, surrogate=base)

    def moved(state):
        flips = state.assign_Z.indices != base_z
        if base_a is not None:
            flips |= state.assign_A.indices != base_a
        return flips

    excluded = np.zeros(data.X.shape[0], dtype=bool)
    for i in range(n):
        for sgn in (1.0, -1.0):
            vec = theta0.copy()
            vec[i] += sgn * h
            excluded |= moved(run(vec))
    weights = (~excluded).astype(np.float64)

    state = run(theta0, weights)
    analytic = model.flatten_grads(model.backward(state, coefficients))
    numeric = np.empty(n)
    for i in range(n):
        vec = theta0.copy()
        vec[i] += h
        up = run(vec, weights).losses
        vec[i] -= 2 * h
        down = run(vec, weights).losses
        numeric[i] = (_weighted(up, config, coefficients) - _weighted(down, config, coefficients)) / (2 * h)
    model.set_flat(theta0)

    groups = {}
    off = 0
    for name, shape in model.param_shapes():
        size = int(np.prod(shape))
        groups.setdefault(name.split(".")[0], []).append(slice(off, off + size))
        off += size
    errs, peaks = {}, {}
    for g, slices in groups.items():
        a = np.concatenate([analytic[s] for s in slices])
        nu = np.concatenate([numeric[s] for s in slices])
        scale = max(np.max(np.abs(a)), np.max(np.abs(nu)))
        errs[g] = 0.0 if scale == 0.0 else float(np.max(np.abs(a - nu)) / scale)
        peaks[g] = float(np.max(np.abs(a)))
    return GradcheckReport(errs, n, int(excluded.sum()), int(excluded.size), tolerance,
                           time.perf_counter() - t0, peaks)


def _weighted(losses, config, coefficients):
    if coefficients is None:
        return losses.total
    coef = loss_coefficients(config)
    coef.update(coefficients)
    return sum(coef[k] * getattr(losses, k) for k in LOSS_NAMES)


# -- ablation -----------------------------------------------------------------

COMPONENT_VARIANTS = (
    ("baseline", False, False),
    ("w_spatiotemporal", False, True),
    ("w_hierarchical", True, False),
    ("histat", True, True),
)
LAMBDA_TEMP_SWEEP = (0.002, 0.02, 0.2, 2.0)


def ablation_grid(base_config, train_cfg, train_set, eval_set, lambda_sweep=LAMBDA_TEMP_SWEEP,
                  include_sweep=True, progress=None, on_result=None):
    """Train the component variants and the temporal-weight sweep.

    All runs share the seed and data; only the varied flags differ. The sweep
    entry equal to ``base_config.lambda_temp`` reuses the full model's run.
    ``on_result(name, train_result)`` is called after every training run.

    Returns:
        list of row dicts (metrics header plus :data:`ABLATION_EXTRA` keys).
    """
    rows = []
    cache = {}

    def run(name, cfg):
        key = (cfg.hierarchical, cfg.temporal, cfg.lambda_temp)
        if key not in cache:
            if progress:
                progress(name)
            res = train(cfg, train_cfg, train_set, None, name)
            if on_result:
                on_result(name, res)
            cache[key] = evaluate(res.model, eval_set)
        report = cache[key]
        row = report.row(train_cfg.steps, name)
        row.update(hierarchical=cfg.hierarchical, temporal=cfg.temporal,
                   lambda_temp=cfg.lambda_temp, seed=cfg.seed, temp_mse=report.temp_mse)
        rows.append(row)

    for name, hier, temporal in COMPONENT_VARIANTS:
        run(name, replace(base_config, hierarchical=hier, temporal=temporal))
    if include_sweep:
        for lt in lambda_sweep:
            run(f"lambda_temp={lt:g}", replace(base_config, hierarchical=True, temporal=True,
                                               lambda_temp=lt))
    return rows


def train_config_from_dict(d):
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    cfg = TrainConfig(**d)
    cfg.validate()
    return cfg
