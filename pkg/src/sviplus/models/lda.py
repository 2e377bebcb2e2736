"""Latent Dirichlet allocation with Dirichlet topics ``q(beta_k)`` as the global."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .. import kernels
from ..errors import ContractError
from ..expfam import DomainFloor, dirichlet_param, kl_divergence
from .base import CEFModel


@dataclass
class LdaLocal:
    gamma: np.ndarray
    iters: np.ndarray


def dirichlet_expectation(a):
    return digamma(a) - digamma(a.sum(axis=-1, keepdims=True))


class LDA(CEFModel):
    """``K`` topics over a ``V`` word vocabulary.

    ``alpha`` is the symmetric document-topic concentration, ``eta`` the
    symmetric topic-word concentration.  The per-document loop runs at most
    ``max_iters`` sweeps and stops once the mean absolute change of
    ``gamma`` falls below ``tol``.

    Topic concentrations are floored at the prior value ``eta``; an exact
    conjugate update never goes below it, while noisy SVI+ updates can.
    """

    name = "lda"
    update_groups = [["topics"]]

    def __init__(self, K, V, alpha=None, eta=0.01, max_iters=100, tol=1e-3):
        self.K = int(K)
        self.V = int(V)
        self.alpha = 1.0 / K if alpha is None else float(alpha)
        self.eta = float(eta)
        self.max_iters = int(max_iters)
        self.tol = float(tol)
        self._prior = dirichlet_param(np.full((self.K, self.V), self.eta))
        self.floor = DomainFloor(dirichlet_min=self.eta)

    @classmethod
    def from_data(cls, corpus, K, **kw):
        return cls(K, corpus.V, **kw)

    def priors(self):
        return {"topics": self._prior}

    def n_data(self, corpus):
        return len(corpus)

    def init_globals(self, corpus, rng):
        lam = self.eta + rng.gamma(100.0, 0.01, size=(self.K, self.V)) / self.V
        return {"topics": dirichlet_param(lam)}

    def _elog_beta(self, globals):
        return dirichlet_expectation(globals["topics"].values + 1.0)

    def _exp_elog_beta(self, globals):
        return np.exp(self._elog_beta(globals))

    def _batch(self, corpus, idx):
        idx = np.ascontiguousarray(np.asarray(idx, dtype=np.int64))
        lens = corpus.ptr[idx + 1] - corpus.ptr[idx]
        if np.any(lens == 0):
            raise ContractError("empty document in batch")
        return idx

    def initial_gamma(self, corpus, idx):
        lengths = np.array([corpus.counts[corpus.ptr[d]:corpus.ptr[d + 1]].sum() for d in idx])
        return np.tile(self.alpha + lengths[:, None] / self.K, (1, self.K))

    def local_step(self, corpus, idx, globals, init=None):
        idx = self._batch(corpus, idx)
        gamma0 = self.initial_gamma(corpus, idx) if init is None else np.array(init.gamma, dtype=float)
        gamma, _, iters = kernels.lda_estep(
            corpus.ids, corpus.counts, corpus.ptr, idx, self._exp_elog_beta(globals),
            self.alpha, np.ascontiguousarray(gamma0), np.zeros(len(idx)), self.max_iters, self.tol,
        )
        return LdaLocal(gamma, iters)

    def word_responsibilities(self, corpus, d, gamma_d, globals):
        """``phi[w, k]`` for the words of document ``d`` given its ``gamma``."""
        ids, _ = corpus.doc(d)
        elog = dirichlet_expectation(gamma_d)[None, :] + self._elog_beta(globals)[:, ids].T
        return np.exp(elog - logsumexp(elog, axis=1, keepdims=True))

    def suff_stats(self, corpus, idx, local, globals, weights, group):
        idx = self._batch(corpus, idx)
        eb = self._exp_elog_beta(globals)
        _, sstats, _ = kernels.lda_estep(
            corpus.ids, corpus.counts, corpus.ptr, idx, eb, self.alpha,
            np.ascontiguousarray(local.gamma), np.ascontiguousarray(weights, dtype=float), 0, self.tol,
        )
        return {"topics": sstats}

    def datum_stats(self, corpus, idx, local, globals):
        out = np.zeros((len(idx), self.K, self.V))
        for b, d in enumerate(idx):
            ids, cts = corpus.doc(d)
            phi = self.word_responsibilities(corpus, d, local.gamma[b], globals)
            out[b][:, ids] = (cts[:, None] * phi).T
        return {"topics": out}

    # -- objective ------------------------------------------------------------

    def doc_terms(self, corpus, idx, globals, local=None):
        """Per-document ``E[ln p(w_d, z_d, theta_d | beta)] - E[ln q(z_d, theta_d)]``.

        Word responsibilities are taken at their optimum given ``gamma``.
        """
        idx = np.asarray(idx, dtype=np.int64)
        if local is None:
            local = self.local_step(corpus, idx, globals)
        gamma = local.gamma
        elog_theta = dirichlet_expectation(gamma)
        elog_beta = self._elog_beta(globals)
        ptr = corpus.ptr
        lens = ptr[idx + 1] - ptr[idx]
        flat = np.concatenate([np.arange(ptr[d], ptr[d + 1]) for d in idx])
        owner = np.repeat(np.arange(len(idx)), lens)
        scores = elog_theta[owner] + elog_beta[:, corpus.ids[flat]].T
        word_part = np.bincount(
            owner, weights=corpus.counts[flat] * logsumexp(scores, axis=1), minlength=len(idx)
        )
        K, a = self.K, self.alpha
        theta_part = (
            ((a - gamma) * elog_theta).sum(axis=1)
            + gammaln(K * a) - K * gammaln(a)
            - gammaln(gamma.sum(axis=1)) + gammaln(gamma).sum(axis=1)
        )
        return word_part + theta_part

    def global_terms(self, globals):
        return -float(np.sum(kl_divergence(globals["topics"], self._prior)))

    def elbo(self, corpus, globals, local=None):
        idx = np.arange(len(corpus))
        return float(self.doc_terms(corpus, idx, globals, local).sum()) + self.global_terms(globals)

    def heldout_objective(self, corpus, globals):
        """Document terms on unseen documents, globals frozen and locals fit from scratch."""
        return float(self.doc_terms(corpus, np.arange(len(corpus)), globals).sum())
