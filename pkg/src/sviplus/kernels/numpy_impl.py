"""Pure-numpy reference implementations of the kernels."""
import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import digamma


def weighted_sum(weights, stats):
    """``sum_n weights[n] * stats[n]`` over the leading axis."""
    return (weights[:, None] * stats).sum(axis=0)


def weighted_scatter(weights, stats, targets, n_targets):
    """Row ``t`` of the result is ``sum_{n: targets[n] = t} weights[n] * stats[n]``."""
    out = np.zeros((n_targets, stats.shape[1]))
    np.add.at(out, targets, weights[:, None] * stats)
    return out


def _exp_dirichlet_expectation(a):
    return np.exp(digamma(a) - digamma(a.sum()))


def lda_estep(ids, cts, ptr, batch, exp_elog_beta, alpha, gamma0, weights, max_iters, tol):
    """Per-document variational fit for LDA.

    Alternates topic proportions ``gamma`` and word responsibilities until the
    mean absolute change of ``gamma`` drops below ``tol``; the responsibilities
    are always left consistent with the final ``gamma``.  Returns ``gamma``
    (B, K), the weighted topic-word statistic ``sum_b w_b n_bw phi_bwk``
    (K, V), and the iteration count per document.
    """
    K, V = exp_elog_beta.shape
    B = len(batch)
    gamma = np.array(gamma0, dtype=float, copy=True)
    sstats = np.zeros((K, V))
    iters = np.zeros(B, dtype=np.int64)
    for b in range(B):
        d = batch[b]
        w_ids = ids[ptr[d]:ptr[d + 1]]
        w_cts = cts[ptr[d]:ptr[d + 1]]
        g = gamma[b]
        eb = exp_elog_beta[:, w_ids]
        et = _exp_dirichlet_expectation(g)
        phinorm = et @ eb + 1e-100
        it = 0
        while it < max_iters:
            last = g
            g = alpha + et * (eb @ (w_cts / phinorm))
            et = _exp_dirichlet_expectation(g)
            phinorm = et @ eb + 1e-100
            it += 1
            if np.mean(np.abs(g - last)) < tol:
                break
        gamma[b] = g
        iters[b] = it
        sstats[:, w_ids] += weights[b] * np.outer(et, w_cts / phinorm) * eb
    return gamma, sstats, iters


def energy_terms(X, Y, chunk=512):
    """Mean pairwise distances ``(E|X-Y|, E|X-X'|, E|Y-Y'|)`` over all pairs."""

    def mean_dist(A, B):
        total = 0.0
        for i in range(0, len(A), chunk):
            total += cdist(A[i:i + chunk], B).sum()
        return total / (len(A) * len(B))

    return mean_dist(X, Y), mean_dist(X, X), mean_dist(Y, Y)
