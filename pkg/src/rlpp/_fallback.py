"""Pure-Python/numpy versions of the hot kernels.

These mirror ``_ext.pyx`` argument for argument. They are the reference the
compiled versions are tested against, and the code path used whenever the
extension is unavailable or ``RLPP_BACKEND=python`` is set.
"""
import math

import numpy as np

ROLLOUT_DONE = 0
ROLLOUT_NEED_MORE = 1
ROLLOUT_OVERFLOW = 2

EPS = 1e-6

_CHUNK = 1 << 22  # kernel-matrix entries evaluated per block


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus_scalar(z):
    if z > 0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def gauss_block_sums(query, source, offsets, inv_two_sigma2, threads=1):
    """out[i, s] = sum_{j in segment s} exp(-(query[i]-source[j])**2 * inv_two_sigma2)."""
    query = np.ascontiguousarray(query, dtype=np.float64)
    source = np.ascontiguousarray(source, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    n, S = query.shape[0], offsets.shape[0] - 1
    out = np.zeros((n, S))
    if n == 0 or source.shape[0] == 0:
        return out
    nonempty = np.flatnonzero(offsets[1:] > offsets[:-1])
    starts = offsets[:-1][nonempty]
    rows = max(1, _CHUNK // source.shape[0])
    for lo in range(0, n, rows):
        q = query[lo:lo + rows]
        K = np.exp(-np.square(q[:, None] - source[None, :]) * inv_two_sigma2)
        out[lo:lo + rows, nonempty] = np.add.reduceat(K, starts, axis=1)
    return out


def rnn_forward(V, W, u, c, gaps):
    """Hidden states h_0..h_N and head pre-activations z_0..z_N."""
    d = V.shape[0]
    N = gaps.shape[0]
    H = np.zeros((N + 1, d))
    for k in range(1, N + 1):
        H[k] = np.tanh(V * gaps[k - 1] + W @ H[k - 1])
    Z = H @ u + c
    return H, Z


def rnn_backward(V, W, u, gaps, H, Z, coef):
    """Backpropagate dObj/dtheta_k (``coef``) to the weights.

    theta_k = softplus(Z[k]) + EPS, Z[k] = u . H[k] + c, and
    H[k] = tanh(V * gaps[k-1] + W @ H[k-1]).
    """
    d = V.shape[0]
    N = gaps.shape[0]
    dz = coef * sigmoid(Z)
    gu = dz @ H
    gc = float(dz.sum())
    gV = np.zeros(d)
    gW = np.zeros((d, d))
    dh = dz[N] * u
    for k in range(N, 0, -1):
        dpre = dh * (1.0 - H[k] * H[k])
        gV += dpre * gaps[k - 1]
        gW += np.outer(dpre, H[k - 1])
        dh = W.T @ dpre + dz[k - 1] * u
    return gV, gW, gu, gc


def rnn_rollout(V, W, u, c, dist, uniforms, T, cap):
    """Sample gaps until the first event at or after ``T``.

    Consumes one uniform per drawn gap, including the censored one. Returns
    ``(status, gaps, H, Z)``; on ``ROLLOUT_NEED_MORE`` the caller must supply
    a longer prefix-compatible uniform buffer and call again.
    """
    d = V.shape[0]
    n_max = uniforms.shape[0]
    gaps = []
    hs = [np.zeros(d)]
    zs = [float(u @ hs[0] + c)]
    t = 0.0
    for k in range(n_max):
        theta = _softplus_scalar(zs[-1]) + EPS
        e = -math.log1p(-uniforms[k])
        a = e / theta if dist == 0 else math.sqrt(2.0 * e / theta)
        t_new = add_time(t, a)
        while t_new <= t:
            # gap lost to rounding; grow it until the time advances
            a = max(2.0 * a, math.ulp(t))
            t_new = add_time(t, a)
        if t_new >= T:
            return ROLLOUT_DONE, np.array(gaps), np.array(hs), np.array(zs)
        if len(gaps) >= cap:
            return ROLLOUT_OVERFLOW, np.array(gaps), np.array(hs), np.array(zs)
        gaps.append(a)
        t = t_new
        h = np.tanh(V * a + W @ hs[-1])
        hs.append(h)
        zs.append(float(u @ h + c))
    return ROLLOUT_NEED_MORE, np.array(gaps), np.array(hs), np.array(zs)


def add_time(t, a):
    """``t + a`` rounded to nearest with ties broken upward.

    Plain round-half-even can make some doubles unreachable as ``t + a`` for
    every double ``a``; breaking ties upward makes the map onto the result
    grid surjective, so :func:`exact_gaps` can always invert it.
    """
    s = t + a
    bp = s - t
    err = (t - (s - bp)) + (a - bp)  # exact rounding error (two-sum)
    if err > 0.0 and err == 0.5 * (math.nextafter(s, math.inf) - s):
        s = math.nextafter(s, math.inf)
    return s


def prefix_sums(gaps):
    """Event times from gaps, accumulated left to right with :func:`add_time`."""
    n = gaps.shape[0]
    out = np.empty(n)
    t = 0.0
    for i in range(n):
        t = add_time(t, float(gaps[i]))
        out[i] = t
    return out


def exact_gaps(times):
    """Gaps whose :func:`prefix_sums` reproduce ``times`` bit for bit."""
    n = times.shape[0]
    out = np.empty(n)
    prev = 0.0
    for i in range(n):
        t = float(times[i])
        g = t - prev
        for _ in range(64):
            r = add_time(prev, g)
            if r == t:
                break
            g = math.nextafter(g, math.inf if r < t else -math.inf)
        out[i] = g
        prev = t
    return out


def hawkes_excitation(times, decay):
    """A[i] = sum_{j<i} exp(-decay * (t_i - t_j)) via the O(N) recursion."""
    n = times.shape[0]
    A = np.zeros(n)
    for i in range(1, n):
        A[i] = math.exp(-decay * (times[i] - times[i - 1])) * (1.0 + A[i - 1])
    return A
