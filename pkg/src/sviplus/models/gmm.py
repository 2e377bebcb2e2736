"""Bayesian Gaussian mixture with Dirichlet weights and Normal-Wishart components."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, logsumexp

from .. import kernels
from ..errors import ContractError, NumericalError
from ..expfam import (
    NaturalParam,
    dirichlet_param,
    kl_divergence,
    normal_wishart_param,
    normal_wishart_params,
    pack_sym,
)
from .base import CEFModel

LOG_2PI = np.log(2 * np.pi)


def dp_gmm_prior(K_trunc: int, mass: float = 1.0) -> NaturalParam:
    """Symmetric Dirichlet with concentration ``mass / K_trunc`` per component."""
    if K_trunc < 2 or mass <= 0:
        raise ContractError("need K_trunc >= 2 and mass > 0")
    return dirichlet_param(np.full(K_trunc, mass / K_trunc))


@dataclass
class GmmLocal:
    resp: np.ndarray
    log_weights: np.ndarray


def _as_array(data):
    return np.asarray(getattr(data, "X", data), dtype=float)


def kmeanspp_seeds(X, K, rng):
    """k-means++ seeding; returns ``K`` rows of ``X`` (repeats allowed when ``K > len(X)``)."""
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            j = rng.integers(n)
        else:
            j = rng.choice(n, p=d2 / total)
        centers.append(X[j])
        d2 = np.minimum(d2, np.sum((X - X[j]) ** 2, axis=1))
    return np.array(centers)


class GaussianMixture(CEFModel):
    """Finite mixture; ``dp_mass`` switches the weight prior to the truncated-DP form.

    Prior defaults: component mean centred on the data mean with mean-precision
    ``beta0 = 1``; Wishart dof ``d + 2`` and scale ``(dof * Cov[x])^-1`` so
    that the prior expected precision is the inverse data covariance; Dirichlet
    concentration ``alpha0`` per component (or ``dp_mass / K``).  With
    ``K = 1`` the weight is fixed at 1 and there is no ``weights`` global.
    """

    name = "gmm"
    update_groups = [["weights", "components"]]

    def __init__(self, K, m0, W0, beta0=1.0, dof0=None, alpha0=1.0, dp_mass=None, init_subsample=1000):
        self.K = int(K)
        self.m0 = np.asarray(m0, dtype=float)
        self.d = self.m0.shape[0]
        self.W0 = np.asarray(W0, dtype=float)
        self.beta0 = float(beta0)
        self.dof0 = float(self.d + 2 if dof0 is None else dof0)
        self.dp_mass = dp_mass
        if self.K < 1:
            raise ContractError("need K >= 1")
        if self.K == 1:
            self.weight_prior = None
            self.update_groups = [["components"]]
        elif dp_mass is not None:
            self.weight_prior = dp_gmm_prior(self.K, dp_mass)
        else:
            self.weight_prior = dirichlet_param(np.full(self.K, float(alpha0)))
        self.component_prior = normal_wishart_param(
            np.tile(self.m0, (self.K, 1)),
            np.full(self.K, self.beta0),
            np.tile(self.W0, (self.K, 1, 1)),
            np.full(self.K, self.dof0),
        )
        self.init_subsample = init_subsample

    @classmethod
    def from_data(cls, data, K, **kw):
        X = _as_array(data)
        d = X.shape[1]
        dof0 = kw.pop("dof0", d + 2)
        cov = np.atleast_2d(np.cov(X, rowvar=False))
        W0 = np.linalg.inv(cov * dof0)
        return cls(K, X.mean(axis=0), W0, dof0=dof0, **kw)

    def priors(self):
        out = {"components": self.component_prior}
        if self.weight_prior is not None:
            out["weights"] = self.weight_prior
        return out

    def n_data(self, data):
        return len(_as_array(data))

    def init_globals(self, data, rng):
        X = _as_array(data)
        if len(X) > self.init_subsample:
            X = X[rng.choice(len(X), self.init_subsample, replace=False)]
        seeds = kmeanspp_seeds(X, self.K, rng)
        comps = normal_wishart_param(
            seeds,
            np.full(self.K, self.beta0),
            np.tile(self.W0, (self.K, 1, 1)),
            np.full(self.K, self.dof0),
        )
        out = self.priors()
        out["components"] = comps
        return out

    # -- local step -----------------------------------------------------------

    def log_weights(self, X, globals):
        """Unnormalised log responsibilities ``E[ln pi_k + ln N(x | mu_k, Lambda_k)]``."""
        if "weights" in globals:
            alpha = globals["weights"].values + 1.0
            elog_pi = digamma(alpha) - digamma(alpha.sum())
        else:
            elog_pi = np.zeros(self.K)
        m, beta, W, nu = normal_wishart_params(globals["components"])
        d = self.d
        i = np.arange(1, d + 1)
        elogdet = (
            digamma((nu[:, None] + 1 - i) / 2.0).sum(-1) + d * np.log(2.0) + np.linalg.slogdet(W)[1]
        )
        diff = X[:, None, :] - m[None, :, :]
        maha = np.einsum("nki,kij,nkj->nk", diff, W, diff)
        equad = d / beta[None, :] + nu[None, :] * maha
        return elog_pi + 0.5 * elogdet - 0.5 * d * LOG_2PI - 0.5 * equad

    def local_step(self, data, idx, globals, init=None):
        X = _as_array(data)[idx]
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ContractError(f"expected {self.d}-dimensional data")
        logw = self.log_weights(X, globals)
        norm = logsumexp(logw, axis=1, keepdims=True)
        if not np.all(np.isfinite(norm)):
            raise NumericalError("log responsibilities underflowed")
        return GmmLocal(np.exp(logw - norm), logw)

    # -- statistics -----------------------------------------------------------

    def _component_stats(self, X, resp):
        xx = pack_sym(X[:, :, None] * X[:, None, :])
        per = np.concatenate([np.ones((len(X), 1)), X, xx, np.ones((len(X), 1))], axis=1)
        return resp[:, :, None] * per[:, None, :]

    def datum_stats(self, data, idx, local, globals):
        X = _as_array(data)[idx]
        out = {"components": self._component_stats(X, local.resp)}
        if self.weight_prior is not None:
            out["weights"] = local.resp
        return out

    def suff_stats(self, data, idx, local, globals, weights, group):
        X = _as_array(data)[idx]
        w = np.ascontiguousarray(weights, dtype=float)
        comp = self._component_stats(X, local.resp).reshape(len(X), -1)
        out = {}
        if "weights" in group:
            out["weights"] = kernels.weighted_sum(w, np.ascontiguousarray(local.resp))
        if "components" in group:
            out["components"] = kernels.weighted_sum(w, comp).reshape(self.K, -1)
        return out

    # -- objective ------------------------------------------------------------

    def datum_terms(self, data, globals, local=None):
        """Per-datum ``E[ln p(x_n, z_n | pi, mu, Lambda)] - E[ln q(z_n)]``."""
        X = _as_array(data)
        if len(X) == 0:
            return np.zeros(0)
        if local is None:
            local = self.local_step(X, np.arange(len(X)), globals)
        r = local.resp
        with np.errstate(divide="ignore", invalid="ignore"):
            rlogr = np.where(r > 0, r * np.log(r), 0.0)
        return (r * local.log_weights).sum(axis=1) - rlogr.sum(axis=1)

    def global_terms(self, globals):
        kl = float(np.sum(kl_divergence(globals["components"], self.component_prior)))
        if self.weight_prior is not None:
            kl += float(kl_divergence(globals["weights"], self.weight_prior))
        return -kl

    def elbo(self, data, globals, local=None):
        return float(self.datum_terms(data, globals, local).sum()) + self.global_terms(globals)

    def assignments(self, data, globals):
        X = _as_array(data)
        return np.argmax(self.log_weights(X, globals), axis=1)
