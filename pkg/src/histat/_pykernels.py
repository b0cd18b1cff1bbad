"""Pure-numpy versions of the compiled kernels.

Same operation order as ``_ckernels``, so both backends agree bit for bit.
Vectorization runs across output elements only; the reduction axis is walked
one slice at a time.
"""
import numpy as np

FEATURES = {"avx": False, "openmp": False}


def matmul(a, b, nthreads=1):
    n, k = a.shape
    out = np.zeros((n, b.shape[1]))
    tmp = np.empty_like(out)
    for p in range(k):
        np.multiply(a[:, p : p + 1], b[p], out=tmp)
        out += tmp
    return out


def matmul_tn(a, b, nthreads=1):
    return matmul(np.ascontiguousarray(a.T), b)


def nearest_rows(v, codebook, nthreads=1):
    n, d = v.shape
    dist = np.zeros((n, codebook.shape[0]))
    for col in range(d):
        diff = v[:, col : col + 1] - codebook[:, col]
        dist += diff * diff
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # np.argmin returns the first minimum, i.e. the lowest index on ties
    return np.argmin(dist, axis=1).astype(np.int64)


def scatter_add_rows(indices, values, n_rows):
    out = np.zeros((n_rows, values.shape[1]))
    np.add.at(out, indices, values)
    return out
