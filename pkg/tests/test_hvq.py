import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histat import hvq
from histat.errors import HistatError, ShapeError
from histat.hvq import Codebook


def brute_nearest(entries, v):
    out = []
    for row in v:
        best, best_d = 0, math.inf
        for j, z in enumerate(entries):
            d = sum((a - b) ** 2 for a, b in zip(row, z))
            if d < best_d:
                best, best_d = j, d
        out.append(best)
    return np.array(out)


def test_assign_examples():
    cb = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]]), "Z")
    got = hvq.assign(cb, np.array([[0.2, 0.1], [0.5, 0.5], [0.9, 0.7]]))
    assert list(got.indices) == [0, 0, 1]
    assert np.array_equal(got.quantized, cb.entries[[0, 0, 1]])


@pytest.mark.parametrize("seed", range(100))
def test_assign_matches_brute_force_with_ties(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 12)), int(rng.integers(1, 6))
    # integer grid values make exact ties common
    entries = rng.integers(-2, 3, size=(n, d)).astype(np.float64)
    if n > 2:
        entries[n - 1] = entries[0]
    v = rng.integers(-2, 3, size=(20, d)).astype(np.float64) / 2
    got = hvq.assign(Codebook(entries, "Z"), v)
    assert np.array_equal(got.indices, brute_nearest(entries, v))


def test_assign_errors():
    with pytest.raises(HistatError):
        hvq.assign(Codebook(np.zeros((0, 2)), "Z"), np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        hvq.assign(Codebook(np.zeros((3, 2)), "Z"), np.zeros((1, 3)))


def test_init_codebook_distribution():
    cb = hvq.init_codebook(np.random.default_rng(0), 64, 32, "Z")
    assert cb.entries.shape == (64, 32)
    assert cb.entries.std() == pytest.approx(0.02, rel=0.05)


def test_ste_forward_backward():
    rng = np.random.default_rng(0)
    v, q, g = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    assert np.array_equal(hvq.ste_forward(v, q), q)
    assert np.array_equal(hvq.ste_backward(g), g)
    with pytest.raises(ShapeError):
        hvq.ste_forward(v, q[:2])


def test_commit_loss_values():
    v = np.array([[1.0, 0.0]])
    value, d_v = hvq.commit_loss(v, np.zeros((1, 2)))
    assert value == 1.0
    np.testing.assert_array_equal(d_v, [[2.0, 0.0]])
    assert hvq.commit_loss(v, v)[0] == 0.0


def test_codebook_loss_equals_commit_and_gradient_oracle():
    rng = np.random.default_rng(4)
    entries = rng.normal(size=(5, 3))
    v = rng.normal(size=(40, 3))
    a = hvq.assign(Codebook(entries, "Z"), v)
    c_val, _ = hvq.commit_loss(v, a.quantized)
    b_val, d_cb = hvq.codebook_loss(v, a, 5)
    assert b_val == c_val
    n = v.shape[0]
    for j in range(5):
        rows = v[a.indices == j]
        if len(rows) == 0:
            assert not d_cb[j].any()
            continue
        expect = 2 * (entries[j] - rows.mean(axis=0)) * len(rows) / n
        np.testing.assert_allclose(d_cb[j], expect, rtol=1e-12, atol=1e-15)


def test_vq_level_loss():
    rng = np.random.default_rng(5)
    entries = rng.normal(size=(4, 3))
    v = rng.normal(size=(10, 3))
    a = hvq.assign(Codebook(entries, "Z"), v)
    total, comps, d_v, d_cb = hvq.vq_level_loss(v, a, 4)
    c_val, c_grad = hvq.commit_loss(v, a.quantized)
    b_val, b_grad = hvq.codebook_loss(v, a, 4)
    assert total == pytest.approx(c_val + b_val, abs=1e-12)
    assert total == 2 * c_val
    assert comps == {"commit": c_val, "codebook": b_val}
    np.testing.assert_array_equal(d_v, c_grad)
    np.testing.assert_array_equal(d_cb, b_grad)
    same = hvq.assign(Codebook(v.copy(), "Z"), v)
    assert hvq.vq_level_loss(v, same, 10)[0] == 0.0


def test_perplexity_examples():
    assert hvq.perplexity(np.arange(16), 16) == pytest.approx(16.0, abs=1e-9)
    assert hvq.perplexity(np.zeros(10, dtype=int), 4) == 1.0
    assert hvq.perplexity(np.array([0, 0, 1, 2]), 8) == pytest.approx(2.8284271, abs=1e-7)
    with pytest.raises(HistatError):
        hvq.perplexity(np.array([], dtype=int), 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=1, max_size=60))
def test_perplexity_and_utilization_bounds(idx):
    p = hvq.perplexity(np.array(idx), 8)
    assert 1.0 - 1e-12 <= p <= 8.0 + 1e-12
    u = hvq.utilization(np.array(idx), 8)
    assert u == len(set(idx)) / 8


def test_reinit_dead_codes():
    rng = np.random.default_rng(0)
    cb = Codebook(rng.normal(size=(4, 2)), "Z")
    recent = rng.normal(size=(6, 2))
    before = cb.entries.copy()
    assert hvq.reinit_dead_codes(cb, recent, np.array([1, 2, 3, 4]), rng) == 0
    assert np.array_equal(cb.entries, before)
    assert hvq.reinit_dead_codes(cb, recent, np.array([1, 0, 3, 4]), rng) == 1
    assert any(np.array_equal(cb.entries[1], r) for r in recent)
    assert np.array_equal(cb.entries[[0, 2, 3]], before[[0, 2, 3]])
    with pytest.raises(HistatError):
        hvq.reinit_dead_codes(cb, np.zeros((0, 2)), np.array([0, 1, 1, 1]), rng)
