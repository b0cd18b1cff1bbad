import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histat import _pykernels, kernels
from histat.model import HiSTAT
from histat.synthdata import generate_dataset

try:
    from histat import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_compiled = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")

shapes = st.tuples(st.integers(1, 23), st.integers(1, 300), st.integers(1, 21))


def test_python_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
    expect = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            s = 0.0
            for k in range(6):
                s += a[i, k] * b[k, j]
            expect[i, j] = s
    assert np.array_equal(_pykernels.matmul(a, b), expect)


def test_python_nearest_rows_lowest_index_on_ties():
    cb = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    v = np.array([[0.5, 0.5], [0.1, 0.0], [2.0, 2.0]])
    assert list(_pykernels.nearest_rows(v, cb)) == [0, 0, 1]


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**31), st.integers(1, 4))
def test_matmul_backends_bit_identical(shape, seed, threads):
    n, k, m = shape
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    ref = _pykernels.matmul(a, b)
    assert _ckernels.matmul(a, b, threads).tobytes() == ref.tobytes()
    c = rng.normal(size=(n, m))
    assert _ckernels.matmul_tn(a, c, threads).tobytes() == _pykernels.matmul_tn(a, c).tobytes()


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 19), st.integers(1, 9), st.integers(0, 2**31),
       st.booleans())
def test_nearest_rows_backends_agree(n, codes, dim, seed, grid):
    rng = np.random.default_rng(seed)
    if grid:  # coarse grid values force exact ties
        cb = rng.integers(-1, 2, size=(codes, dim)).astype(float)
        v = rng.integers(-2, 3, size=(n, dim)) / 2.0
    else:
        cb, v = rng.normal(size=(codes, dim)), rng.normal(size=(n, dim))
    assert np.array_equal(_ckernels.nearest_rows(v, cb, 1), _pykernels.nearest_rows(v, cb))
    assert np.array_equal(_ckernels.nearest_rows(v, cb, 3), _pykernels.nearest_rows(v, cb))


@needs_compiled
def test_scatter_backends_agree():
    rng = np.random.default_rng(2)
    idx = rng.integers(0, 7, size=100)
    vals = rng.normal(size=(100, 5))
    assert (_ckernels.scatter_add_rows(idx, vals, 7).tobytes()
            == _pykernels.scatter_add_rows(idx, vals, 7).tobytes())


@needs_compiled
def test_full_model_identical_across_backends_and_threads(monkeypatch):
    data = generate_dataset(2, seed=0)
    model = HiSTAT()
    results = []
    for backend, threads in (("compiled", "1"), ("compiled", "4"), ("python", "1")):
        monkeypatch.setenv("HISTAT_THREADS", threads)
        prev = kernels.use_backend(backend)
        try:
            s = model.forward(data)
            g = model.flatten_grads(model.backward(s))
        finally:
            kernels.use_backend(prev)
        results.append((s.losses.total, g.tobytes()))
    assert results[0] == results[1] == results[2]


def test_threads_env_parsing(monkeypatch):
    monkeypatch.setenv("HISTAT_THREADS", "3")
    assert kernels._threads() == 3
    monkeypatch.setenv("HISTAT_THREADS", "nonsense")
    assert kernels._threads() == 1
    monkeypatch.delenv("HISTAT_THREADS")
    assert kernels._threads() == 1


def test_forced_python_backend():
    out = subprocess.run([sys.executable, "-c", "import histat.kernels as k; print(k.BACKEND)"],
                         capture_output=True, text=True, env={"HISTAT_PURE_PYTHON": "1",
                                                              "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")
