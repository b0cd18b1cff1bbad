# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

Every kernel here fixes the floating-point operation order so the results are
bit-identical to the numpy versions in ``_pykernels``: products are rounded
before they are added (no fused multiply-add) and each output element
accumulates its terms strictly left to right.
"""
import numpy as np

cdef extern from *:
    """
    #ifdef __AVX__
    #include <immintrin.h>
    #endif
    #ifdef _OPENMP
    #include <omp.h>
    #endif

    /* c[i, j] += sum_{p0 <= p < p1} A(i, p) * b[p, j], p ascending; A(i, p) = a[i*ai + p*ap].
       Partial sums round-trip through c exactly, so tiling over p keeps the order. */
    #ifdef __AVX__
    static inline void hs_tile4(const double *a, Py_ssize_t ai, Py_ssize_t ap, const double *b,
                                double *c, Py_ssize_t i, Py_ssize_t j0, Py_ssize_t p0,
                                Py_ssize_t p1, Py_ssize_t m, int two) {
        const double *a0 = a + i * ai, *a1 = a0 + ai, *a2 = a1 + ai, *a3 = a2 + ai;
        double *cr = c + i * m + j0;
        __m256d c00 = _mm256_loadu_pd(cr), c10 = _mm256_loadu_pd(cr + m);
        __m256d c20 = _mm256_loadu_pd(cr + 2 * m), c30 = _mm256_loadu_pd(cr + 3 * m);
        __m256d c01 = c00, c11 = c00, c21 = c00, c31 = c00;
        Py_ssize_t p;
        if (two) {
            c01 = _mm256_loadu_pd(cr + 4); c11 = _mm256_loadu_pd(cr + m + 4);
            c21 = _mm256_loadu_pd(cr + 2 * m + 4); c31 = _mm256_loadu_pd(cr + 3 * m + 4);
            for (p = p0; p < p1; ++p) {
                const double *br = b + p * m + j0;
                __m256d b0 = _mm256_loadu_pd(br), b1 = _mm256_loadu_pd(br + 4), x;
                Py_ssize_t o = p * ap;
                x = _mm256_broadcast_sd(a0 + o);
                c00 = _mm256_add_pd(c00, _mm256_mul_pd(x, b0));
                c01 = _mm256_add_pd(c01, _mm256_mul_pd(x, b1));
                x = _mm256_broadcast_sd(a1 + o);
                c10 = _mm256_add_pd(c10, _mm256_mul_pd(x, b0));
                c11 = _mm256_add_pd(c11, _mm256_mul_pd(x, b1));
                x = _mm256_broadcast_sd(a2 + o);
                c20 = _mm256_add_pd(c20, _mm256_mul_pd(x, b0));
                c21 = _mm256_add_pd(c21, _mm256_mul_pd(x, b1));
                x = _mm256_broadcast_sd(a3 + o);
                c30 = _mm256_add_pd(c30, _mm256_mul_pd(x, b0));
                c31 = _mm256_add_pd(c31, _mm256_mul_pd(x, b1));
            }
            _mm256_storeu_pd(cr + 4, c01); _mm256_storeu_pd(cr + m + 4, c11);
            _mm256_storeu_pd(cr + 2 * m + 4, c21); _mm256_storeu_pd(cr + 3 * m + 4, c31);
        } else {
            for (p = p0; p < p1; ++p) {
                __m256d b0 = _mm256_loadu_pd(b + p * m + j0);
                Py_ssize_t o = p * ap;
                c00 = _mm256_add_pd(c00, _mm256_mul_pd(_mm256_broadcast_sd(a0 + o), b0));
                c10 = _mm256_add_pd(c10, _mm256_mul_pd(_mm256_broadcast_sd(a1 + o), b0));
                c20 = _mm256_add_pd(c20, _mm256_mul_pd(_mm256_broadcast_sd(a2 + o), b0));
                c30 = _mm256_add_pd(c30, _mm256_mul_pd(_mm256_broadcast_sd(a3 + o), b0));
            }
        }
        _mm256_storeu_pd(cr, c00); _mm256_storeu_pd(cr + m, c10);
        _mm256_storeu_pd(cr + 2 * m, c20); _mm256_storeu_pd(cr + 3 * m, c30);
    }

    static inline void hs_tile1(const double *a, Py_ssize_t ai, Py_ssize_t ap, const double *b,
                                double *c, Py_ssize_t i, Py_ssize_t j0, Py_ssize_t p0,
                                Py_ssize_t p1, Py_ssize_t m) {
        const double *a0 = a + i * ai;
        double *cr = c + i * m + j0;
        __m256d acc = _mm256_loadu_pd(cr);
        Py_ssize_t p;
        for (p = p0; p < p1; ++p)
            acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_broadcast_sd(a0 + p * ap),
                                                   _mm256_loadu_pd(b + p * m + j0)));
        _mm256_storeu_pd(cr, acc);
    }
    #endif

    static void hs_matmul(const double *a, Py_ssize_t ai, Py_ssize_t ap,
                          const double *b, double *c,
                          Py_ssize_t n, Py_ssize_t K, Py_ssize_t m, int nthreads) {
        const Py_ssize_t KT = 256;
        Py_ssize_t npanel = (m + 7) / 8, p0, jb;
        (void)nthreads;
        for (p0 = 0; p0 < K; p0 += KT) {
            Py_ssize_t p1 = (p0 + KT < K) ? p0 + KT : K;
            #ifdef _OPENMP
            #pragma omp parallel for schedule(static) num_threads(nthreads)
            #endif
            for (jb = 0; jb < npanel; ++jb) {
                Py_ssize_t j0 = jb * 8, jv = j0, i, j, p;
                Py_ssize_t w = (m - j0) < 8 ? (m - j0) : 8;
    #ifdef __AVX__
                if (w >= 4) {
                    int two = (w == 8);
                    for (i = 0; i + 4 <= n; i += 4) hs_tile4(a, ai, ap, b, c, i, j0, p0, p1, m, two);
                    for (; i < n; ++i) {
                        hs_tile1(a, ai, ap, b, c, i, j0, p0, p1, m);
                        if (two) hs_tile1(a, ai, ap, b, c, i, j0 + 4, p0, p1, m);
                    }
                    jv = j0 + (two ? 8 : 4);
                }
    #endif
                for (i = 0; i < n; ++i)
                    for (j = jv; j < j0 + w; ++j) {
                        double s = c[i * m + j];
                        for (p = p0; p < p1; ++p) s = s + a[i * ai + p * ap] * b[p * m + j];
                        c[i * m + j] = s;
                    }
            }
        }
    }

    /* out[i] = argmin_j sum_d (v[i, d] - cbt[d, j])^2, d ascending, lowest j on ties */
    static void hs_argmin(const double *v, const double *cbt, long long *out,
                          Py_ssize_t n, Py_ssize_t D, Py_ssize_t m, int nthreads) {
        Py_ssize_t i;
        (void)nthreads;
        #ifdef _OPENMP
        #pragma omp parallel for schedule(static) num_threads(nthreads)
        #endif
        for (i = 0; i < n; ++i) {
            const double *vr = v + i * D;
            double best = 0.0;
            long long arg = -1;
            Py_ssize_t j = 0, d, q;
    #ifdef __AVX__
            for (; j + 4 <= m; j += 4) {
                __m256d acc = _mm256_setzero_pd();
                for (d = 0; d < D; ++d) {
                    __m256d diff = _mm256_sub_pd(_mm256_broadcast_sd(vr + d),
                                                 _mm256_loadu_pd(cbt + d * m + j));
                    acc = _mm256_add_pd(acc, _mm256_mul_pd(diff, diff));
                }
                double tmp[4];
                _mm256_storeu_pd(tmp, acc);
                for (q = 0; q < 4; ++q)
                    if (arg < 0 || tmp[q] < best) { best = tmp[q]; arg = j + q; }
            }
    #endif
            for (; j < m; ++j) {
                double s = 0.0;
                for (d = 0; d < D; ++d) {
                    double diff = vr[d] - cbt[d * m + j];
                    s = s + diff * diff;
                }
                if (arg < 0 || s < best) { best = s; arg = j; }
            }
            out[i] = arg;
        }
    }

    static void hs_scatter(const long long *idx, const double *val, double *out,
                           Py_ssize_t n, Py_ssize_t D) {
        Py_ssize_t i, d;
        for (i = 0; i < n; ++i) {
            double *o = out + idx[i] * D;
            const double *x = val + i * D;
            for (d = 0; d < D; ++d) o[d] = o[d] + x[d];
        }
    }

    static int hs_has_avx(void) {
    #ifdef __AVX__
        return 1;
    #else
        return 0;
    #endif
    }
    static int hs_has_openmp(void) {
    #ifdef _OPENMP
        return 1;
    #else
        return 0;
    #endif
    }
    """
    void hs_matmul(const double *a, Py_ssize_t ai, Py_ssize_t ap, const double *b, double *c,
                   Py_ssize_t n, Py_ssize_t K, Py_ssize_t m, int nthreads) nogil
    void hs_argmin(const double *v, const double *cbt, long long *out,
                   Py_ssize_t n, Py_ssize_t D, Py_ssize_t m, int nthreads) nogil
    void hs_scatter(const long long *idx, const double *val, double *out,
                    Py_ssize_t n, Py_ssize_t D) nogil
    int hs_has_avx()
    int hs_has_openmp()

FEATURES = {"avx": bool(hs_has_avx()), "openmp": bool(hs_has_openmp())}


def matmul(const double[:, ::1] a, const double[:, ::1] b, int nthreads=1):
    cdef Py_ssize_t n = a.shape[0], K = a.shape[1], m = b.shape[1]
    out = np.zeros((n, m))
    cdef double[:, ::1] c = out
    if n == 0 or m == 0 or K == 0:
        return out
    with nogil:
        hs_matmul(&a[0, 0], K, 1, &b[0, 0], &c[0, 0], n, K, m, nthreads)
    return out


def matmul_tn(const double[:, ::1] a, const double[:, ::1] b, int nthreads=1):
    """``a.T @ b`` without materializing the transpose."""
    cdef Py_ssize_t N = a.shape[0], n = a.shape[1], m = b.shape[1]
    out = np.zeros((n, m))
    cdef double[:, ::1] c = out
    if n == 0 or m == 0 or N == 0:
        return out
    with nogil:
        hs_matmul(&a[0, 0], 1, n, &b[0, 0], &c[0, 0], n, N, m, nthreads)
    return out


def nearest_rows(const double[:, ::1] v, const double[:, ::1] codebook, int nthreads=1):
    cdef Py_ssize_t n = v.shape[0], D = v.shape[1], m = codebook.shape[0]
    out = np.zeros(n, dtype=np.int64)
    cdef long long[::1] o = out
    cbt_arr = np.ascontiguousarray(codebook.T)
    cdef const double[:, ::1] cbt = cbt_arr
    if n == 0:
        return out
    if D == 0:
        return out
    with nogil:
        hs_argmin(&v[0, 0], &cbt[0, 0], &o[0], n, D, m, nthreads)
    return out


def scatter_add_rows(const long long[::1] indices, const double[:, ::1] values, Py_ssize_t n_rows):
    cdef Py_ssize_t n = values.shape[0], D = values.shape[1]
    out = np.zeros((n_rows, D))
    cdef double[:, ::1] o = out
    if n == 0 or D == 0 or n_rows == 0:
        return out
    with nogil:
        hs_scatter(&indices[0], &values[0, 0], &o[0, 0], n, D)
    return out
