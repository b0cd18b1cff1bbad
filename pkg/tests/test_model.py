import math
from dataclasses import replace

import numpy as np
import pytest

from histat.errors import ConfigError, HistatError, NumericError, ShapeError
from histat.lipnet import normalize_weight
from histat.model import (LOSS_NAMES, HiSTAT, LossBreakdown, ModelConfig, StaleStateError, Tokens,
                          loss_coefficients, total_loss)
from histat.synthdata import TrajectoryBatch, generate_dataset

TINY = ModelConfig(d_feature=2, d_hidden=3, d_latent=2, encoder_hidden=(3,), lip_layers_psi=(2,),
                   lip_layers_omega=(2,), temporal_decoder_hidden=(3, 3), alpha_k=4, k=2,
                   lambda_temp=0.5, lambda_reg=0.1, codebook_init_std=0.5)
SMALL = ModelConfig(d_feature=3, d_hidden=8, d_latent=4, encoder_hidden=(8, 8), lip_layers_psi=(4, 4),
                    lip_layers_omega=(4, 4), temporal_decoder_hidden=(6, 6), alpha_k=8, k=3,
                    codebook_init_std=0.5)


def tiny_batch():
    X = np.array([[0.3, -0.2], [0.9, 0.4], [-0.5, 0.7]])
    return TrajectoryBatch(X, np.array([0.0, 0.5, 1.0]), seq_len=3, batch=1)


def small_batch(seed=0, batch=4, seq_len=5):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(batch * seq_len, 3))
    T = np.tile(np.linspace(0, 1, seq_len), batch)
    return TrajectoryBatch(X, T, seq_len=seq_len, batch=batch)


# -- independent re-evaluation of the whole pipeline --------------------------------

def _dense(layers, rows, weights=None):
    out = []
    for row in rows:
        h = list(row)
        for li, layer in enumerate(layers):
            w = layer.weight if weights is None else weights[li]
            z = [sum(w[o][i] * h[i] for i in range(len(h))) + layer.bias[o] for o in range(len(w))]
            h = [max(0.0, v) for v in z] if layer.activation == "relu" else z
        out.append(h)
    return out


def _lip(net, rows):
    ws = []
    for layer in net.layers:
        sp = math.log1p(math.exp(layer.c))
        ws.append([[x * sp / sum(abs(y) for y in row) for x in row] for row in layer.weight.tolist()])
    return _dense(net.layers, rows, ws)


def _nearest(codes, rows):
    idx = []
    for row in rows:
        d = [sum((a - b) ** 2 for a, b in zip(row, c)) for c in codes]
        idx.append(d.index(min(d)))
    return idx


def _msq(a, b):
    return sum(sum((x - y) ** 2 for x, y in zip(r, s)) for r, s in zip(a, b)) / len(a)


def hand_trace(model, X, T):
    V = _dense(model.encoder.layers, X.tolist())
    Vl = _lip(model.psi, V)
    Z = model.codebook_Z.entries.tolist()
    jz = _nearest(Z, Vl)
    QZ = [Z[j] for j in jz]
    QZl = _lip(model.omega, QZ)
    A = model.codebook_A.entries.tolist()
    ia = _nearest(A, QZl)
    QA = [A[i] for i in ia]
    Xh = _dense(model.spatial_decoder.layers, QA)
    Th = _dense(model.temporal_decoder.layers, QZl)
    c = model.config
    losses = {
        "commit_Z": _msq(Vl, QZ), "codebook_Z": _msq(Vl, QZ),
        "commit_A": _msq(QZl, QA), "codebook_A": _msq(QZl, QA),
        "spat": _msq(Xh, X.tolist()), "temp": _msq(Th, [[t] for t in T]),
        "reg_Z": math.prod(math.log1p(math.exp(l.c)) for l in model.psi.layers),
        "reg_A": math.prod(math.log1p(math.exp(l.c)) for l in model.omega.layers),
    }
    total = (c.lambda_vq * (losses["commit_Z"] + losses["codebook_Z"] + losses["commit_A"]
                            + losses["codebook_A"]) + c.lambda_spat * losses["spat"]
             + c.lambda_temp * losses["temp"] + c.lambda_reg * (losses["reg_Z"] + losses["reg_A"]))
    return losses, total, jz, ia


def test_micro_model_matches_hand_trace():
    model = HiSTAT(TINY)
    b = tiny_batch()
    state = model.forward(b)
    losses, total, jz, ia = hand_trace(model, b.X, b.T)
    for name in LOSS_NAMES:
        assert getattr(state.losses, name) == pytest.approx(losses[name], rel=1e-12, abs=1e-15)
    assert state.losses.total == pytest.approx(total, rel=1e-12)
    tokens, _ = model.tokenize(b.X)
    assert list(tokens.j_star) == jz and list(tokens.i_star) == ia


def test_default_config_values():
    c = ModelConfig()
    assert (c.alpha_k, c.k, c.lambda_temp) == (64, 16, 0.02)
    assert (c.d_feature, c.d_hidden, c.d_latent) == (7, 128, 32)
    assert (c.lambda_vq, c.lambda_spat, c.lambda_reg) == (1.0, 1.0, 1e-6)
    assert c.encoder_hidden == (128, 128) and c.temporal_decoder_hidden == (64, 64)


def test_config_validation_and_dict_round_trip():
    with pytest.raises(ConfigError):
        ModelConfig(alpha_k=4, k=8)
    with pytest.raises(ConfigError):
        ModelConfig(lambda_temp=-1.0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"bogus": 1})
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL


def test_total_loss_examples():
    ones = LossBreakdown(*([1.0] * 8))
    cfg = ModelConfig(lambda_vq=1, lambda_spat=1, lambda_temp=1, lambda_reg=1)
    assert total_loss(ones, cfg) == 8.0
    zero = ModelConfig(lambda_vq=0, lambda_spat=0, lambda_temp=0, lambda_reg=0)
    assert total_loss(ones, zero) == 0.0
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 3, size=8)
    lb = LossBreakdown(*vals)
    cfg = ModelConfig(lambda_vq=0.7, lambda_spat=1.3, lambda_temp=0.02, lambda_reg=1e-3)
    expect = (0.7 * (vals[0] + vals[1] + vals[2] + vals[3]) + 1.3 * vals[4] + 0.02 * vals[5]
              + 1e-3 * (vals[6] + vals[7]))
    assert total_loss(lb, cfg) == pytest.approx(expect, abs=1e-12)


def test_only_spatial_weight():
    cfg = replace(SMALL, lambda_vq=0.0, lambda_temp=0.0, lambda_reg=0.0)
    state = HiSTAT(cfg).forward(small_batch())
    assert state.losses.total == state.losses.spat


def test_total_decomposition_on_forward():
    model = HiSTAT(SMALL)
    for seed in range(5):
        s = model.forward(small_batch(seed))
        coef = loss_coefficients(SMALL)
        recomputed = sum(coef[n] * getattr(s.losses, n) for n in LOSS_NAMES)
        assert abs(s.losses.total - recomputed) <= 1e-12
        assert all(getattr(s.losses, n) >= 0 for n in LOSS_NAMES)


def test_flat_ablation_contract():
    hier = HiSTAT(SMALL)
    flat = HiSTAT(replace(SMALL, hierarchical=False))
    b = small_batch()
    sh, sf = hier.forward(b), flat.forward(b)
    assert sf.losses.commit_A == sf.losses.codebook_A == sf.losses.reg_A == 0.0
    assert sf.losses.commit_Z == sh.losses.commit_Z
    assert sf.losses.codebook_Z == sh.losses.codebook_Z
    assert sf.losses.reg_Z == sh.losses.reg_Z
    assert np.array_equal(hier.get_flat(), flat.get_flat())
    from histat.tensorcore import mlp_forward
    expect, _ = mlp_forward(flat.spatial_decoder, sf.QZ)
    assert np.array_equal(sf.X_hat, expect)
    with pytest.raises(ConfigError):
        flat.hierarchy_map()


def test_spatial_only_drops_temp():
    s = HiSTAT(replace(SMALL, temporal=False)).forward(small_batch())
    assert s.losses.temp == 0.0


def _grads(model, batch, **coef):
    base = {n: 0.0 for n in LOSS_NAMES}
    base.update(coef)
    return model.backward(model.forward(batch), base)


def _all_zero(grads, prefix):
    keys = [k for k in grads if k == prefix or k.startswith(prefix + ".")]
    assert keys
    return all(not np.any(grads[k]) for k in keys)


def test_stop_gradient_routing():
    model = HiSTAT(SMALL)
    b = small_batch()
    g = _grads(model, b, commit_Z=1.0, commit_A=1.0)
    assert _all_zero(g, "Z") and _all_zero(g, "A")
    g = _grads(model, b, codebook_Z=1.0, codebook_A=1.0)
    for p in ("theta", "psi", "omega", "spat", "temp"):
        assert _all_zero(g, p)
    assert not _all_zero(g, "Z")


def test_lambda_vq_zero_silences_codebooks():
    model = HiSTAT(replace(SMALL, lambda_vq=0.0))
    g = model.backward(model.forward(small_batch()))
    assert _all_zero(g, "Z") and _all_zero(g, "A")


def test_no_reconstruction_no_decoder_gradient():
    model = HiSTAT(replace(SMALL, lambda_spat=0.0, lambda_temp=0.0, lambda_reg=0.0))
    g = model.backward(model.forward(small_batch()))
    assert _all_zero(g, "spat") and _all_zero(g, "temp")


def test_stale_state():
    model = HiSTAT(SMALL)
    s = model.forward(small_batch())
    model.set_flat(model.get_flat())
    with pytest.raises(StaleStateError):
        model.backward(s)


def test_flat_vector_round_trip():
    model = HiSTAT(SMALL)
    vec = np.random.default_rng(1).normal(size=model.num_parameters())
    model.set_flat(vec)
    assert np.array_equal(model.get_flat(), vec)
    with pytest.raises(ShapeError):
        model.set_flat(vec[:-1])


def test_forward_errors():
    model = HiSTAT(SMALL)
    with pytest.raises(ShapeError):
        model.forward(TrajectoryBatch(np.zeros((4, 2)), np.linspace(0, 1, 4), 4, 1))
    model.encoder.layers[0].weight[0, 0] = np.nan
    with pytest.raises(NumericError) as info:
        model.forward(small_batch())
    assert info.value.component


def test_tokens_consistency_and_determinism():
    model = HiSTAT(SMALL)
    for seed in range(10):
        X = np.random.default_rng(seed).uniform(-1, 1, size=(50, 3)) * 3
        t1, q = model.tokenize(X)
        t2, _ = model.tokenize(X)
        assert np.array_equal(t1.j_star, t2.j_star) and np.array_equal(t1.i_star, t2.i_star)
        hm = model.hierarchy_map()
        assert np.array_equal(t1.i_star, hm[t1.j_star])
        assert np.array_equal(q, model.codebook_A.entries[t1.i_star])
        assert len(set(t1.j_star)) <= SMALL.alpha_k and len(set(t1.i_star)) <= SMALL.k
        s = model.forward(TrajectoryBatch(X, np.tile(np.linspace(0, 1, 5), 10), 5, 10))
        assert np.array_equal(s.assign_A.indices, hm[s.assign_Z.indices])


def test_hierarchy_map_shape():
    model = HiSTAT(SMALL)
    hm = model.hierarchy_map()
    assert hm.shape == (SMALL.alpha_k,)
    assert len(set(hm.tolist())) <= SMALL.k


def test_detokenize():
    model = HiSTAT(SMALL)
    X = small_batch().X
    tokens, _ = model.tokenize(X)
    out = model.detokenize(tokens)
    assert out.shape == X.shape
    same = np.flatnonzero(tokens.i_star == tokens.i_star[0])
    assert all(np.array_equal(out[k], out[same[0]]) for k in same)
    pairs = list(tokens)
    assert np.array_equal(model.detokenize(pairs), out)
    with pytest.raises(HistatError):
        model.detokenize(Tokens(np.array([0]), np.array([SMALL.k])))


def test_flat_tokens():
    model = HiSTAT(replace(SMALL, hierarchical=False))
    tokens, q = model.tokenize(small_batch().X)
    assert tokens.i_star is None
    assert all(p.i_star == -1 for p in tokens)
    assert np.array_equal(q, model.codebook_Z.entries[tokens.j_star])


def test_default_model_runs_on_synthetic_data():
    data = generate_dataset(4, seed=3)
    model = HiSTAT()
    s = model.forward(data)
    assert s.X_hat.shape == data.X.shape and s.T_hat.shape == (data.X.shape[0],)
    g = model.flatten_grads(model.backward(s))
    assert g.shape == (model.num_parameters(),) and np.all(np.isfinite(g))
