# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures and semantics as ``_fallback``."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log1p, sqrt, tanh, nextafter, fmax, INFINITY
from scipy.linalg.cython_blas cimport dgemv, dger

cnp.import_array()

ROLLOUT_DONE = 0
ROLLOUT_NEED_MORE = 1
ROLLOUT_OVERFLOW = 2

cdef double EPS = 1e-6


cdef inline double _softplus(double z) nogil:
    if z > 0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


cdef inline double _sigmoid(double z) nogil:
    cdef double ez
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


cdef inline double _add_time(double t, double a) nogil:
    # round to nearest, ties upward (see _fallback.add_time)
    cdef double s = t + a
    cdef double bp = s - t
    cdef double err = (t - (s - bp)) + (a - bp)
    cdef double up
    if err > 0.0:
        up = nextafter(s, INFINITY)
        if err == 0.5 * (up - s):
            s = up
    return s


def prefix_sums(const double[::1] gaps):
    cdef Py_ssize_t n = gaps.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double t = 0.0
    for i in range(n):
        t = _add_time(t, gaps[i])
        out[i] = t
    return out_arr


def exact_gaps(const double[::1] times):
    cdef Py_ssize_t n = times.shape[0], i
    cdef int k
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double prev = 0.0, g, t, r
    for i in range(n):
        t = times[i]
        g = t - prev
        for k in range(64):
            r = _add_time(prev, g)
            if r == t:
                break
            if r < t:
                g = nextafter(g, INFINITY)
            else:
                g = nextafter(g, -INFINITY)
        out[i] = g
        prev = t
    return out_arr


def gauss_block_sums(const double[::1] query, const double[::1] source,
                     const long long[::1] offsets, double inv_two_sigma2,
                     int threads=1):
    cdef Py_ssize_t n = query.shape[0]
    cdef Py_ssize_t S = offsets.shape[0] - 1
    out_arr = np.zeros((n, S), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, s, j
    cdef double q, acc, diff
    if n == 0 or S == 0:
        return out_arr
    if threads < 1:
        threads = 1
    for i in prange(n, nogil=True, schedule="static", num_threads=threads):
        q = query[i]
        for s in range(S):
            acc = 0.0
            for j in range(offsets[s], offsets[s + 1]):
                diff = q - source[j]
                acc = acc + exp(-diff * diff * inv_two_sigma2)
            out[i, s] = acc
    return out_arr


def rnn_forward(const double[::1] V, const double[:, ::1] W, const double[::1] u,
                double c, const double[::1] gaps):
    cdef int d = V.shape[0]
    cdef Py_ssize_t N = gaps.shape[0]
    H_arr = np.zeros((N + 1, d), dtype=np.float64)
    Z_arr = np.empty(N + 1, dtype=np.float64)
    cdef double[:, ::1] H = H_arr
    cdef double[::1] Z = Z_arr
    cdef Py_ssize_t k
    cdef int j
    cdef double acc
    for k in range(N + 1):
        if k > 0:
            _cell(&V[0], &W[0, 0], d, gaps[k - 1], &H[k - 1, 0], &H[k, 0])
        acc = c
        for j in range(d):
            acc = acc + u[j] * H[k, j]
        Z[k] = acc
    return H_arr, Z_arr


cdef inline void _cell(const double* V, const double* W, int d, double a,
                       const double* h_prev, double* h_out) nogil:
    # h_out = tanh(V*a + W @ h_prev); W is C-ordered so it is W^T to BLAS.
    cdef char trans = b'T'
    cdef int inc = 1
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef int j
    dgemv(&trans, &d, &d, &one, <double*>W, &d, <double*>h_prev, &inc, &zero, h_out, &inc)
    for j in range(d):
        h_out[j] = tanh(h_out[j] + V[j] * a)


def rnn_backward(const double[::1] V, const double[:, ::1] W, const double[::1] u,
                 const double[::1] gaps, const double[:, ::1] H, const double[::1] Z,
                 const double[::1] coef):
    cdef int d = V.shape[0]
    cdef Py_ssize_t N = gaps.shape[0]
    gV_arr = np.zeros(d, dtype=np.float64)
    gW_arr = np.zeros((d, d), dtype=np.float64)
    gu_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] gV = gV_arr
    cdef double[:, ::1] gW = gW_arr
    cdef double[::1] gu = gu_arr
    dz_arr = np.empty(N + 1, dtype=np.float64)
    cdef double[::1] dz = dz_arr
    cdef double[::1] dh = np.zeros(d, dtype=np.float64)
    cdef double[::1] dpre = np.zeros(d, dtype=np.float64)
    cdef double gc = 0.0
    cdef Py_ssize_t k
    cdef int j
    cdef char transN = b'N'
    cdef int inc = 1
    cdef double one = 1.0
    cdef double hk
    for k in range(N + 1):
        dz[k] = coef[k] * _sigmoid(Z[k])
        gc = gc + dz[k]
    for k in range(N + 1):
        for j in range(d):
            gu[j] = gu[j] + dz[k] * H[k, j]
    for j in range(d):
        dh[j] = dz[N] * u[j]
    for k in range(N, 0, -1):
        for j in range(d):
            hk = H[k, j]
            dpre[j] = dh[j] * (1.0 - hk * hk)
            gV[j] = gV[j] + dpre[j] * gaps[k - 1]
        # gW[i, j] += dpre[i] * H[k-1, j]; Fortran view of gW is gW^T.
        dger(&d, &d, &one, <double*>&H[k - 1, 0], &inc, &dpre[0], &inc, &gW[0, 0], &d)
        # dh = W^T @ dpre + dz[k-1] * u
        for j in range(d):
            dh[j] = dz[k - 1] * u[j]
        dgemv(&transN, &d, &d, &one, <double*>&W[0, 0], &d, &dpre[0], &inc, &one, &dh[0], &inc)
    return gV_arr, gW_arr, gu_arr, gc


def rnn_rollout(const double[::1] V, const double[:, ::1] W, const double[::1] u,
                double c, int dist, const double[::1] uniforms, double T, Py_ssize_t cap):
    cdef int d = V.shape[0]
    cdef Py_ssize_t n_max = uniforms.shape[0]
    H_arr = np.zeros((n_max + 1, d), dtype=np.float64)
    Z_arr = np.empty(n_max + 1, dtype=np.float64)
    G_arr = np.empty(n_max, dtype=np.float64)
    cdef double[:, ::1] H = H_arr
    cdef double[::1] Z = Z_arr
    cdef double[::1] G = G_arr
    cdef double t = 0.0
    cdef double t_new, theta, e, a, acc
    cdef Py_ssize_t k, n = 0
    cdef int j
    cdef int status = ROLLOUT_NEED_MORE
    acc = c
    for j in range(d):
        acc = acc + u[j] * H[0, j]
    Z[0] = acc
    for k in range(n_max):
        theta = _softplus(Z[n]) + EPS
        e = -log1p(-uniforms[k])
        if dist == 0:
            a = e / theta
        else:
            a = sqrt(2.0 * e / theta)
        t_new = _add_time(t, a)
        while t_new <= t:
            a = fmax(2.0 * a, nextafter(t, INFINITY) - t)
            t_new = _add_time(t, a)
        if t_new >= T:
            status = ROLLOUT_DONE
            break
        if n >= cap:
            status = ROLLOUT_OVERFLOW
            break
        G[n] = a
        t = t_new
        n += 1
        _cell(&V[0], &W[0, 0], d, a, &H[n - 1, 0], &H[n, 0])
        acc = c
        for j in range(d):
            acc = acc + u[j] * H[n, j]
        Z[n] = acc
    return status, G_arr[:n].copy(), H_arr[:n + 1].copy(), Z_arr[:n + 1].copy()


def hawkes_excitation(const double[::1] times, double decay):
    cdef Py_ssize_t n = times.shape[0]
    A_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] A = A_arr
    cdef Py_ssize_t i
    for i in range(1, n):
        A[i] = exp(-decay * (times[i] - times[i - 1])) * (1.0 + A[i - 1])
    return A_arr
