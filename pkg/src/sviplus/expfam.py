"""Exponential-family primitives for the Dirichlet, multivariate Gaussian and
Normal-Wishart families.

Natural parameters and expected sufficient statistics are flat float vectors
whose layout is fixed per family (``LAYOUT_VERSION``).  Symmetric matrices are
stored packed: upper triangle, row-major.  A ``NaturalParam`` may also hold a
stack of parameters of the same family, in which case ``values`` has shape
``(..., family.size)`` and every operation maps over the leading axes.

Layouts
-------
Dirichlet(K)
    ``alpha - 1`` (K entries).  Statistic: ``ln pi``.
MultivariateGaussian(d)
    ``[P mu, pack(-P/2)]`` with precision ``P``.  Statistic: ``[x, pack(x x^T)]``.
NormalWishart(d)
    ``[beta, beta m, pack(W^-1 + beta m m^T), nu]`` for
    ``Lambda ~ Wishart(nu, W)`` and ``mu | Lambda ~ N(m, (beta Lambda)^-1)``.
    Statistic: ``[-mu^T Lambda mu / 2, Lambda mu, pack(-Lambda / 2),
    ln|Lambda| / 2]``.  A Gaussian observation ``x`` with weight ``r``
    contributes ``[r, r x, pack(r x x^T), r]``, so conjugate updates are plain
    vector additions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import digamma, gammaln

from .errors import ContractError, InvalidParameterError, NumericalError

LAYOUT_VERSION = 1

FamilyKind = Literal["dirichlet", "mvn", "normal_wishart"]


@dataclass(frozen=True)
class Family:
    kind: FamilyKind
    dim: int

    def __post_init__(self):
        if self.kind not in ("dirichlet", "mvn", "normal_wishart"):
            raise ContractError(f"unknown family kind {self.kind!r}")
        if self.kind == "dirichlet" and self.dim < 2:
            raise ContractError("Dirichlet needs K >= 2")
        if self.dim < 1:
            raise ContractError("dimension must be >= 1")

    @property
    def size(self) -> int:
        """Length of the flat natural-parameter vector."""
        d = self.dim
        if self.kind == "dirichlet":
            return d
        if self.kind == "mvn":
            return d + d * (d + 1) // 2
        return 1 + d + d * (d + 1) // 2 + 1

    def __str__(self):
        return f"{self.kind}({self.dim})"


def Dirichlet(K: int) -> Family:
    return Family("dirichlet", K)


def MultivariateGaussian(d: int) -> Family:
    return Family("mvn", d)


def NormalWishart(d: int) -> Family:
    return Family("normal_wishart", d)


@dataclass(frozen=True)
class DomainFloor:
    dirichlet_min: float = 1e-6
    dof_margin: float = 1e-3
    eig_min: float = 1e-8


DEFAULT_FLOOR = DomainFloor()


@dataclass(frozen=True, eq=False)
class NaturalParam:
    family: Family
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 0 or v.shape[-1] != self.family.size:
            raise ContractError(
                f"{self.family} expects trailing length {self.family.size}, got shape {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        """Leading (stack) shape."""
        return self.values.shape[:-1]

    def __getitem__(self, idx):
        if not self.shape:
            raise TypeError("not a stacked parameter")
        return NaturalParam(self.family, self.values[idx])

    def __len__(self):
        if not self.shape:
            raise TypeError("not a stacked parameter")
        return self.shape[0]


# SuffStat shares the layout and representation of NaturalParam.
SuffStat = NaturalParam


# ---------------------------------------------------------------------------
# packing helpers


def _triu(d):
    return np.triu_indices(d)


def pack_sym(A: np.ndarray) -> np.ndarray:
    """Pack the upper triangle (row-major) of ``A[..., d, d]``."""
    d = A.shape[-1]
    i, j = _triu(d)
    return A[..., i, j]


def unpack_sym(v: np.ndarray, d: int) -> np.ndarray:
    i, j = _triu(d)
    out = np.zeros(v.shape[:-1] + (d, d))
    out[..., i, j] = v
    out[..., j, i] = v
    return out


def sym_pair_weights(d: int) -> np.ndarray:
    """Multiplicities of packed entries, so ``<A, B>_F = sum(w * pack(A) * pack(B))``."""
    i, j = _triu(d)
    return np.where(i == j, 1.0, 2.0)


def _split(family: Family, v: np.ndarray):
    d = family.dim
    p = d * (d + 1) // 2
    if family.kind == "mvn":
        return v[..., :d], v[..., d:d + p]
    # normal_wishart
    return v[..., 0], v[..., 1:1 + d], v[..., 1 + d:1 + d + p], v[..., -1]


# ---------------------------------------------------------------------------
# constructors / accessors


def dirichlet_param(alpha) -> NaturalParam:
    alpha = np.asarray(alpha, dtype=float)
    return NaturalParam(Dirichlet(alpha.shape[-1]), alpha - 1.0)


def mvn_param(mean, precision) -> NaturalParam:
    mean = np.asarray(mean, dtype=float)
    P = np.asarray(precision, dtype=float)
    d = mean.shape[-1]
    h = np.einsum("...ij,...j->...i", P, mean)
    return NaturalParam(MultivariateGaussian(d), np.concatenate([h, pack_sym(-0.5 * P)], axis=-1))


def normal_wishart_param(mean, beta, scale, dof) -> NaturalParam:
    """Build from mean ``m``, mean-precision ``beta``, Wishart scale ``W`` and dof ``nu``."""
    m = np.asarray(mean, dtype=float)
    W = np.asarray(scale, dtype=float)
    d = m.shape[-1]
    beta = np.asarray(beta, dtype=float)
    dof = np.asarray(dof, dtype=float)
    C = np.linalg.inv(W) + beta[..., None, None] * m[..., :, None] * m[..., None, :]
    vals = np.concatenate(
        [beta[..., None], beta[..., None] * m, pack_sym(C), dof[..., None]], axis=-1
    )
    return NaturalParam(NormalWishart(d), vals)


def dirichlet_concentration(q: NaturalParam) -> np.ndarray:
    _expect(q, "dirichlet")
    return q.values + 1.0


def mvn_moments(q: NaturalParam):
    """Return ``(mean, covariance)``."""
    _expect(q, "mvn")
    h, negP = _split(q.family, q.values)
    P = -2.0 * unpack_sym(negP, q.family.dim)
    try:
        cov = np.linalg.inv(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"precision matrix not invertible ({exc})") from None
    if not np.all(np.isfinite(cov)):
        raise NumericalError("covariance is not finite")
    return np.einsum("...ij,...j->...i", cov, h), cov


def mvn_precision(q: NaturalParam) -> np.ndarray:
    _expect(q, "mvn")
    return -2.0 * unpack_sym(_split(q.family, q.values)[1], q.family.dim)


def normal_wishart_params(q: NaturalParam):
    """Return ``(m, beta, W, nu)``."""
    _expect(q, "normal_wishart")
    beta, bm, C, nu = _split(q.family, q.values)
    m = bm / beta[..., None]
    Winv = unpack_sym(C, q.family.dim) - bm[..., :, None] * m[..., None, :]
    return m, beta, np.linalg.inv(Winv), nu


def _expect(q, kind):
    if q.family.kind != kind:
        raise ContractError(f"expected a {kind} parameter, got {q.family}")


# ---------------------------------------------------------------------------
# validation


def _sym_min_eig(A):
    return np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))[..., 0]


def check_valid(q: NaturalParam) -> None:
    """Raise ``InvalidParameterError`` if ``q`` lies outside its family's domain."""
    v = q.values
    if not np.all(np.isfinite(v)):
        raise InvalidParameterError(f"{q.family}: non-finite natural parameter")
    fam = q.family
    if fam.kind == "dirichlet":
        if np.any(v + 1.0 <= 0):
            raise InvalidParameterError("Dirichlet concentration must be > 0")
    elif fam.kind == "mvn":
        if np.any(_sym_min_eig(mvn_precision(q)) <= 0):
            raise InvalidParameterError("precision matrix is not positive definite")
    else:
        beta, bm, C, nu = _split(fam, v)
        if np.any(beta <= 0):
            raise InvalidParameterError("Normal-Wishart mean precision must be > 0")
        if np.any(nu <= fam.dim - 1):
            raise InvalidParameterError("Normal-Wishart dof must exceed d - 1")
        Winv = unpack_sym(C, fam.dim) - bm[..., :, None] * bm[..., None, :] / beta[..., None, None]
        if np.any(_sym_min_eig(Winv) <= 0):
            raise InvalidParameterError("Wishart scale matrix is not positive definite")


# ---------------------------------------------------------------------------
# expectations, entropy, KL


def _wishart_elogdet(W, nu, d):
    i = np.arange(1, d + 1)
    return (
        digamma((nu[..., None] + 1 - i) / 2.0).sum(-1)
        + d * np.log(2.0)
        + np.linalg.slogdet(W)[1]
    )


def expected_suff_stats(q: NaturalParam) -> NaturalParam:
    """Expected sufficient statistics ``E_q[t]`` in the family's layout."""
    check_valid(q)
    fam = q.family
    d = fam.dim
    if fam.kind == "dirichlet":
        a = q.values + 1.0
        return NaturalParam(fam, digamma(a) - digamma(a.sum(-1, keepdims=True)))
    if fam.kind == "mvn":
        mu, cov = mvn_moments(q)
        second = cov + mu[..., :, None] * mu[..., None, :]
        return NaturalParam(fam, np.concatenate([mu, pack_sym(second)], axis=-1))
    m, beta, W, nu = normal_wishart_params(q)
    ELam = nu[..., None, None] * W
    ELam_mu = np.einsum("...ij,...j->...i", ELam, m)
    Equad = d / beta + np.einsum("...i,...i->...", m, ELam_mu)
    Elogdet = _wishart_elogdet(W, nu, d)
    vals = np.concatenate(
        [
            (-0.5 * Equad)[..., None],
            ELam_mu,
            pack_sym(-0.5 * ELam),
            (0.5 * Elogdet)[..., None],
        ],
        axis=-1,
    )
    return NaturalParam(fam, vals)


def _log_beta(a):
    return gammaln(a).sum(-1) - gammaln(a.sum(-1))


def _wishart_log_norm(W, nu, d):
    # log of the normalizer B(W, nu) (Bishop B.79)
    return (
        -0.5 * nu * np.linalg.slogdet(W)[1]
        - 0.5 * nu * d * np.log(2.0)
        - multigammaln_vec(0.5 * nu, d)
    )


def multigammaln_vec(a, d):
    a = np.asarray(a, dtype=float)
    i = np.arange(1, d + 1)
    return 0.25 * d * (d - 1) * np.log(np.pi) + gammaln(a[..., None] + (1 - i) / 2.0).sum(-1)


def _wishart_entropy(W, nu, d):
    return -_wishart_log_norm(W, nu, d) - 0.5 * (nu - d - 1) * _wishart_elogdet(W, nu, d) + 0.5 * nu * d


def entropy(q: NaturalParam):
    """Differential entropy in nats."""
    check_valid(q)
    fam = q.family
    d = fam.dim
    if fam.kind == "dirichlet":
        a = q.values + 1.0
        a0 = a.sum(-1)
        K = fam.dim
        return _log_beta(a) + (a0 - K) * digamma(a0) - ((a - 1.0) * digamma(a)).sum(-1)
    if fam.kind == "mvn":
        P = mvn_precision(q)
        return 0.5 * d * np.log(2 * np.pi * np.e) - 0.5 * np.linalg.slogdet(P)[1]
    m, beta, W, nu = normal_wishart_params(q)
    # H[Lambda] + E_Lambda H[N(m, (beta Lambda)^-1)]
    return (
        _wishart_entropy(W, nu, d)
        + 0.5 * d * np.log(2 * np.pi * np.e / beta)
        - 0.5 * _wishart_elogdet(W, nu, d)
    )


def kl_divergence(q: NaturalParam, p: NaturalParam):
    """``KL(q || p)`` in closed form."""
    if q.family != p.family:
        raise ContractError(f"family mismatch: {q.family} vs {p.family}")
    check_valid(q)
    check_valid(p)
    fam = q.family
    d = fam.dim
    if fam.kind == "dirichlet":
        a = q.values + 1.0
        b = p.values + 1.0
        a0 = a.sum(-1, keepdims=True)
        return (
            _log_beta(b) - _log_beta(a)
            + ((a - b) * (digamma(a) - digamma(a0))).sum(-1)
        )
    if fam.kind == "mvn":
        mq, Sq = mvn_moments(q)
        mp, _ = mvn_moments(p)
        Pp = mvn_precision(p)
        diff = mp - mq
        return 0.5 * (
            np.einsum("...ij,...ji->...", Pp, Sq)
            + np.einsum("...i,...ij,...j->...", diff, Pp, diff)
            - d
            - np.linalg.slogdet(Sq)[1]
            - np.linalg.slogdet(Pp)[1]
        )
    mq, bq, Wq, nq = normal_wishart_params(q)
    mp, bp, Wp, npp = normal_wishart_params(p)
    Elogdet = _wishart_elogdet(Wq, nq, d)
    kl_wish = (
        _wishart_log_norm(Wq, nq, d) - _wishart_log_norm(Wp, npp, d)
        + 0.5 * (nq - npp) * Elogdet
        + 0.5 * nq * (np.einsum("...ij,...ji->...", np.linalg.inv(Wp), Wq) - d)
    )
    diff = mq - mp
    kl_gauss = 0.5 * (
        d * bp / bq - d + d * np.log(bq / bp)
        + bp * nq * np.einsum("...i,...ij,...j->...", diff, Wq, diff)
    )
    return kl_wish + kl_gauss


# ---------------------------------------------------------------------------
# domain repair


def _floor_eigs(A, eig_min):
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    w, V = np.linalg.eigh(A)
    w = np.maximum(w, eig_min)
    return np.einsum("...ij,...j,...kj->...ik", V, w, V)


def _repair_rows(A, eig_min, offset=None):
    """Eigen-floor only the stacked matrices whose minimum eigenvalue is too small.

    ``offset`` is a matrix that will later be added back and subtracted again;
    the floor is raised above the rounding error of that round trip so the
    repaired rows stay valid after it.
    """
    A = np.array(A, dtype=float)
    bad = _sym_min_eig(A) < 0.5 * eig_min
    if np.any(bad):
        floor = np.full(int(bad.sum()), float(eig_min))
        if offset is not None:
            scale = np.abs(A[bad] + offset[bad]).max(axis=(-2, -1)) + np.abs(offset[bad]).max(axis=(-2, -1))
            floor = np.maximum(floor, 64 * A.shape[-1] * np.finfo(float).eps * scale)
        A[bad] = _floor_eigs(A[bad], floor[:, None])
    return A, bad


def project_to_domain(lam: NaturalParam, floor: DomainFloor = DEFAULT_FLOOR) -> NaturalParam:
    """Clamp/eigen-floor ``lam`` onto its family's valid domain.

    Valid entries are returned bit-for-bit unchanged.  The result is a fixed
    point of this function.
    """
    v = np.array(lam.values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidParameterError(f"{lam.family}: cannot project non-finite parameter")
    fam = lam.family
    d = fam.dim
    if fam.kind == "dirichlet":
        low = v + 1.0 < floor.dirichlet_min
        if not np.any(low):
            return lam
        v[low] = floor.dirichlet_min - 1.0
        return NaturalParam(fam, v)
    if fam.kind == "mvn":
        h, negP = _split(fam, v)
        P = -2.0 * unpack_sym(negP, d)
        P, bad = _repair_rows(P, floor.eig_min)
        if not np.any(bad):
            return lam
        v[..., d:] = pack_sym(-0.5 * P)
        return NaturalParam(fam, v)
    flat = v.reshape(-1, fam.size)
    changed = False
    beta = flat[:, 0]
    if np.any(beta < floor.eig_min):
        flat[beta < floor.eig_min, 0] = floor.eig_min
        changed = True
    nu_min = d - 1 + floor.dof_margin
    if np.any(flat[:, -1] < nu_min):
        flat[flat[:, -1] < nu_min, -1] = nu_min
        changed = True
    beta = flat[:, 0]
    bm = flat[:, 1:1 + d]
    outer = bm[:, :, None] * bm[:, None, :] / beta[:, None, None]
    Winv = unpack_sym(flat[:, 1 + d:-1], d) - outer
    Winv, bad = _repair_rows(Winv, floor.eig_min, outer)
    if np.any(bad):
        flat[bad, 1 + d:-1] = pack_sym(Winv[bad] + outer[bad])
        changed = True
    if not changed:
        return lam
    return NaturalParam(fam, flat.reshape(v.shape))
