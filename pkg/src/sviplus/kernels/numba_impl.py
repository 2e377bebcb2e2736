"""numba-compiled kernels; see ``numpy_impl`` for the contracts."""
import math

import numpy as np
from numba import njit, vectorize


@njit(cache=True)
def _digamma(x):
    # recurrence up to x >= 10, then the asymptotic series; |error| < 1e-13 for x >= 1e-6
    result = 0.0
    while x < 10.0:
        result -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    t = f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (1.0 / 240 + f * (-1.0 / 132)))))
    return result + math.log(x) - 0.5 / x + t


@vectorize(["float64(float64)"], cache=True)
def digamma(x):
    return _digamma(x)


@njit(cache=True)
def weighted_sum(weights, stats):
    S, D = stats.shape
    out = np.zeros(D)
    for n in range(S):
        w = weights[n]
        for j in range(D):
            out[j] += w * stats[n, j]
    return out


@njit(cache=True)
def weighted_scatter(weights, stats, targets, n_targets):
    S, D = stats.shape
    out = np.zeros((n_targets, D))
    for n in range(S):
        w = weights[n]
        t = targets[n]
        for j in range(D):
            out[t, j] += w * stats[n, j]
    return out


@njit(cache=True)
def _exp_elog(g, out):
    K = g.shape[0]
    tot = 0.0
    for k in range(K):
        tot += g[k]
    dt = _digamma(tot)
    for k in range(K):
        out[k] = math.exp(_digamma(g[k]) - dt)


@njit(cache=True)
def _phinorm(et, exp_elog_beta, w_ids, out):
    K = et.shape[0]
    for i in range(w_ids.shape[0]):
        s = 0.0
        v = w_ids[i]
        for k in range(K):
            s += et[k] * exp_elog_beta[k, v]
        out[i] = s + 1e-100


@njit(cache=True)
def lda_estep(ids, cts, ptr, batch, exp_elog_beta, alpha, gamma0, weights, max_iters, tol):
    K, V = exp_elog_beta.shape
    B = batch.shape[0]
    gamma = gamma0.copy()
    sstats = np.zeros((K, V))
    iters = np.zeros(B, dtype=np.int64)
    et = np.empty(K)
    last = np.empty(K)
    for b in range(B):
        d = batch[b]
        lo = ptr[d]
        hi = ptr[d + 1]
        w_ids = ids[lo:hi]
        w_cts = cts[lo:hi]
        nw = hi - lo
        phinorm = np.empty(nw)
        g = gamma[b]
        _exp_elog(g, et)
        _phinorm(et, exp_elog_beta, w_ids, phinorm)
        it = 0
        while it < max_iters:
            for k in range(K):
                last[k] = g[k]
                s = 0.0
                for i in range(nw):
                    s += exp_elog_beta[k, w_ids[i]] * w_cts[i] / phinorm[i]
                g[k] = alpha + et[k] * s
            _exp_elog(g, et)
            _phinorm(et, exp_elog_beta, w_ids, phinorm)
            it += 1
            change = 0.0
            for k in range(K):
                change += abs(g[k] - last[k])
            if change / K < tol:
                break
        iters[b] = it
        wb = weights[b]
        for i in range(nw):
            v = w_ids[i]
            c = wb * w_cts[i] / phinorm[i]
            for k in range(K):
                sstats[k, v] += c * et[k] * exp_elog_beta[k, v]
    return gamma, sstats, iters


@njit(cache=True)
def _mean_dist(A, B):
    n, D = A.shape
    m = B.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(D):
                diff = A[i, k] - B[j, k]
                s += diff * diff
            total += math.sqrt(s)
    return total / (n * m)


def energy_terms(X, Y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    return _mean_dist(X, Y), _mean_dist(X, X), _mean_dist(Y, Y)
