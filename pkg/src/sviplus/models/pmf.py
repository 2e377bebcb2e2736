"""Probabilistic matrix factorization with Gaussian factors ``q(u_i)``, ``q(v_j)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ContractError
from ..expfam import DomainFloor, NaturalParam, kl_divergence, mvn_moments, mvn_param, pack_sym
from .base import CEFModel


@dataclass
class PmfLocal:
    """Current first and second moments of both factor sets."""

    mean_u: np.ndarray
    second_u: np.ndarray
    mean_v: np.ndarray
    second_v: np.ndarray


def factor_moments(q: NaturalParam):
    mean, cov = mvn_moments(q)
    return mean, cov + mean[:, :, None] * mean[:, None, :]


class MatrixFactorization(CEFModel):
    """``y_ij ~ N(u_i . v_j, sigma2)`` with ``u_i, v_j ~ N(0, c I)``.

    Both factor sets are global.  Each rating contributes
    ``sigma2^-1 [y E[v_j], pack(-E[v_j v_j^T] / 2)]`` to ``q(u_i)`` and the
    mirror image to ``q(v_j)``.  The two blocks are updated in sequence, each
    against the other's current moments.

    ``noise="per-rating"`` draws one weight per rating over the whole batch and
    applies it to both factor updates.  ``noise="per-factor"`` instead draws
    independent weights within each user's (or item's) ratings, so that the
    effective batch size ``M`` applies to every factor's own statistic.
    Precision blocks are floored at the prior precision ``1 / c``, the
    smallest value an exact conjugate update can produce.
    """

    name = "pmf"
    update_groups = [["U"], ["V"]]

    def __init__(self, n_users, n_items, d=5, sigma2=0.5, c=1.0, init_var=0.1, noise="per-rating"):
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.d = int(d)
        self.sigma2 = float(sigma2)
        self.c = float(c)
        self.init_var = float(init_var)
        if noise not in ("per-factor", "per-rating"):
            raise ContractError(f"unknown noise mode {noise!r}")
        self.noise = noise
        self.floor = DomainFloor(eig_min=1.0 / self.c)
        eye = np.eye(self.d) / self.c
        self._prior_u = mvn_param(np.zeros((self.n_users, self.d)), np.tile(eye, (self.n_users, 1, 1)))
        self._prior_v = mvn_param(np.zeros((self.n_items, self.d)), np.tile(eye, (self.n_items, 1, 1)))

    @classmethod
    def from_data(cls, data, **kw):
        return cls(data.n_users, data.n_items, **kw)

    def priors(self):
        return {"U": self._prior_u, "V": self._prior_v}

    def n_data(self, data):
        return len(data.ratings)

    def init_globals(self, data, rng):
        prec = np.eye(self.d) / self.c
        sd = np.sqrt(self.init_var)
        U = mvn_param(rng.normal(0.0, sd, (self.n_users, self.d)), np.tile(prec, (self.n_users, 1, 1)))
        V = mvn_param(rng.normal(0.0, sd, (self.n_items, self.d)), np.tile(prec, (self.n_items, 1, 1)))
        return {"U": U, "V": V}

    def noise_groups(self, data, idx, group):
        if self.noise == "per-rating":
            return None
        idx = slice(None) if idx is None else idx
        return data.users[idx] if group == ["U"] else data.items[idx]

    def local_step(self, data, idx, globals, init=None):
        mu, su = factor_moments(globals["U"])
        mv, sv = factor_moments(globals["V"])
        return PmfLocal(mu, su, mv, sv)

    def _check(self, data, idx):
        u, i = data.users[idx], data.items[idx]
        if len(u) and (u.min() < 0 or u.max() >= self.n_users or i.min() < 0 or i.max() >= self.n_items):
            raise ContractError("rating index out of range")
        return u, i, data.ratings[idx]

    def _rating_stats(self, y, mean_other, second_other):
        scale = 1.0 / self.sigma2
        return scale * np.concatenate(
            [y[:, None] * mean_other, pack_sym(-0.5 * second_other)], axis=1
        )

    def datum_stats(self, data, idx, local, globals):
        u, i, y = self._check(data, idx)
        su = self._rating_stats(y, local.mean_v[i], local.second_v[i])
        sv = self._rating_stats(y, local.mean_u[u], local.second_u[u])
        S = len(idx)
        out_u = np.zeros((S, self.n_users, su.shape[1]))
        out_v = np.zeros((S, self.n_items, sv.shape[1]))
        out_u[np.arange(S), u] = su
        out_v[np.arange(S), i] = sv
        return {"U": out_u, "V": out_v}

    def suff_stats(self, data, idx, local, globals, weights, group):
        u, i, y = self._check(data, idx)
        w = np.ascontiguousarray(weights, dtype=float)
        out = {}
        if "U" in group:
            s = self._rating_stats(y, local.mean_v[i], local.second_v[i])
            out["U"] = kernels.weighted_scatter(w, s, np.ascontiguousarray(u), self.n_users)
        if "V" in group:
            s = self._rating_stats(y, local.mean_u[u], local.second_u[u])
            out["V"] = kernels.weighted_scatter(w, s, np.ascontiguousarray(i), self.n_items)
        return out

    def datum_terms(self, data, globals, local=None):
        """Expected log-likelihood of every rating."""
        if local is None:
            local = self.local_step(data, None, globals)
        u, i, y = data.users, data.items, data.ratings
        mu, mv = local.mean_u[u], local.mean_v[i]
        cross = np.einsum("nab,nba->n", local.second_u[u], local.second_v[i])
        sq = y * y - 2 * y * np.einsum("nd,nd->n", mu, mv) + cross
        return -0.5 * np.log(2 * np.pi * self.sigma2) - 0.5 * sq / self.sigma2

    def elbo(self, data, globals, local=None):
        kl = np.sum(kl_divergence(globals["U"], self._prior_u)) + np.sum(
            kl_divergence(globals["V"], self._prior_v)
        )
        return float(self.datum_terms(data, globals, local).sum() - kl)

    def predict(self, globals, users, items):
        mu, _ = mvn_moments(globals["U"])
        mv, _ = mvn_moments(globals["V"])
        return np.einsum("nd,nd->n", mu[users], mv[items])
