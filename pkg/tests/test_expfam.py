import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.spatial import cKDTree
from scipy.special import digamma as sp_digamma

from sviplus.errors import ContractError, InvalidParameterError
from sviplus.expfam import (
    DEFAULT_FLOOR,
    Dirichlet,
    DomainFloor,
    Family,
    MultivariateGaussian,
    NaturalParam,
    NormalWishart,
    dirichlet_concentration,
    dirichlet_param,
    entropy,
    expected_suff_stats,
    kl_divergence,
    mvn_moments,
    mvn_param,
    mvn_precision,
    normal_wishart_param,
    normal_wishart_params,
    pack_sym,
    project_to_domain,
    unpack_sym,
)

from conftest import random_spd


# ---------------------------------------------------------------------------
# helpers


def random_params(kind, n, rng, d=2):
    """``n`` stacked valid parameters of the given family."""
    if kind == "dirichlet":
        return dirichlet_param(rng.uniform(0.3, 8.0, size=(n, d + 1)))
    if kind == "mvn":
        P = np.array([random_spd(rng, d) for _ in range(n)])
        return mvn_param(rng.normal(0, 2, (n, d)), P)
    W = np.array([random_spd(rng, d, 0.5) for _ in range(n)])
    return normal_wishart_param(rng.normal(0, 2, (n, d)), rng.uniform(0.3, 4.0, n), W,
                                rng.uniform(d + 0.5, d + 10.0, n))


def sample_nw(q, n, rng):
    m, beta, W, nu = normal_wishart_params(q)
    d = len(m)
    L = stats.wishart(df=float(nu), scale=W).rvs(size=n, random_state=rng).reshape(n, d, d)
    cov = np.linalg.inv(beta * L)
    chol = np.linalg.cholesky(cov)
    mu = m + np.einsum("nij,nj->ni", chol, rng.standard_normal((n, d)))
    return mu, L


def nw_logpdf(q, mu, L):
    m, beta, W, nu = normal_wishart_params(q)
    d = len(m)
    lw = stats.wishart(df=float(nu), scale=W).logpdf(np.moveaxis(L, 0, -1))
    diff = mu - m
    quad = np.einsum("ni,nij,nj->n", diff, L, diff)
    ln = 0.5 * (d * np.log(beta / (2 * np.pi)) + np.linalg.slogdet(L)[1] - beta * quad)
    return lw + ln


# ---------------------------------------------------------------------------
# families and layouts


def test_family_sizes():
    assert Dirichlet(3).size == 3
    assert MultivariateGaussian(2).size == 2 + 3
    assert NormalWishart(2).size == 1 + 2 + 3 + 1


@pytest.mark.parametrize("kind,dim", [("dirichlet", 1), ("mvn", 0), ("normal_wishart", 0), ("beta", 2)])
def test_family_rejects_bad_dims(kind, dim):
    with pytest.raises(ContractError):
        Family(kind, dim)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_pack_unpack_roundtrip(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    A = A + A.T
    assert np.array_equal(unpack_sym(pack_sym(A), d), A)


def test_pack_is_upper_triangle_row_major():
    A = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    assert pack_sym(A).tolist() == [1, 2, 3, 4, 5, 6]


def test_natural_param_is_read_only():
    q = dirichlet_param([2.0, 3.0])
    with pytest.raises(ValueError):
        q.values[0] = 5.0


def test_mvn_roundtrip_moments():
    rng = np.random.default_rng(0)
    P = random_spd(rng, 3)
    mean = rng.standard_normal(3)
    m, C = mvn_moments(mvn_param(mean, P))
    np.testing.assert_allclose(m, mean, atol=1e-12)
    np.testing.assert_allclose(C, np.linalg.inv(P), atol=1e-12)


def test_normal_wishart_roundtrip():
    rng = np.random.default_rng(1)
    W = random_spd(rng, 2)
    q = normal_wishart_param([1.0, -2.0], 3.0, W, 7.0)
    m, beta, W2, nu = normal_wishart_params(q)
    np.testing.assert_allclose(m, [1.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(W2, W, atol=1e-12)
    assert beta == pytest.approx(3.0) and nu == pytest.approx(7.0)


# ---------------------------------------------------------------------------
# expected sufficient statistics


def test_dirichlet_uniform_elog_is_minus_one():
    e = expected_suff_stats(dirichlet_param([1.0, 1.0])).values
    np.testing.assert_allclose(e, [-1.0, -1.0], atol=1e-14)


def test_mvn_standard_normal_moments():
    e = expected_suff_stats(mvn_param([0.0], [[1.0]])).values
    np.testing.assert_allclose(e, [0.0, 1.0], atol=1e-14)


def test_dirichlet_elog_matches_quadrature():
    alpha = np.array([2.0, 3.0, 5.0])
    e = expected_suff_stats(dirichlet_param(alpha)).values
    a0 = alpha.sum()
    for k, a in enumerate(alpha):
        # marginal pi_k ~ Beta(a, a0 - a)
        val, _ = integrate.quad(lambda p: np.log(p) * stats.beta.pdf(p, a, a0 - a), 0, 1, limit=200)
        assert abs(e[k] - val) < 1e-3


@pytest.mark.parametrize("kind", ["dirichlet", "mvn", "normal_wishart"])
def test_expected_stats_match_monte_carlo(kind):
    """50 random parameters per family, 10^6 draws (2*10^5 for Normal-Wishart).

    Error is measured relative to ``max(|E t|, sd(t))`` so that coordinates
    whose mean is near zero are judged on the statistic's own scale.
    """
    rng = np.random.default_rng(42)
    qs = random_params(kind, 50, rng)
    n = 200_000 if kind == "normal_wishart" else 1_000_000
    worst = 0.0
    for i in range(50):
        q = qs[i]
        e = expected_suff_stats(q).values
        if kind == "dirichlet":
            x = rng.dirichlet(dirichlet_concentration(q), size=n)
            t = np.log(x)
        elif kind == "mvn":
            mean, cov = mvn_moments(q)
            x = rng.multivariate_normal(mean, cov, size=n)
            t = np.concatenate([x, pack_sym(x[:, :, None] * x[:, None, :])], axis=1)
        else:
            mu, L = sample_nw(q, n, rng)
            Lmu = np.einsum("nij,nj->ni", L, mu)
            t = np.concatenate([
                (-0.5 * np.einsum("ni,ni->n", mu, Lmu))[:, None], Lmu, pack_sym(-0.5 * L),
                (0.5 * np.linalg.slogdet(L)[1])[:, None],
            ], axis=1)
        mc = t.mean(axis=0)
        scale = np.maximum(np.abs(e), t.std(axis=0))
        worst = max(worst, float(np.max(np.abs(mc - e) / scale)))
    assert worst < 1e-2


def test_invalid_parameter_rejected():
    with pytest.raises(InvalidParameterError):
        expected_suff_stats(NaturalParam(Dirichlet(2), np.array([-1.5, 0.0])))
    bad = NaturalParam(MultivariateGaussian(1), np.array([0.0, 0.5]))  # precision -1
    with pytest.raises(InvalidParameterError):
        entropy(bad)


# ---------------------------------------------------------------------------
# entropy


def test_entropy_unit_gaussian():
    assert entropy(mvn_param([0.0], [[1.0]])) == pytest.approx(0.5 * np.log(2 * np.pi * np.e), abs=1e-12)
    assert entropy(mvn_param([0.0], [[1.0]])) == pytest.approx(1.41894, abs=1e-5)


def test_entropy_flat_dirichlet():
    assert entropy(dirichlet_param([1.0, 1.0, 1.0])) == pytest.approx(-np.log(2.0), abs=1e-12)


def test_entropy_scaling_law():
    h1 = entropy(mvn_param([0.0, 0.0], np.eye(2)))
    h4 = entropy(mvn_param([0.0, 0.0], np.eye(2) / 4.0))
    assert h4 - h1 == pytest.approx(np.log(4.0), abs=1e-12)


def test_entropy_matches_scipy():
    rng = np.random.default_rng(3)
    alpha = rng.uniform(0.5, 5, 4)
    assert entropy(dirichlet_param(alpha)) == pytest.approx(stats.dirichlet(alpha).entropy(), abs=1e-10)
    P = random_spd(rng, 3)
    ref = stats.multivariate_normal(np.zeros(3), np.linalg.inv(P)).entropy()
    assert entropy(mvn_param(np.zeros(3), P)) == pytest.approx(ref, abs=1e-10)


def test_normal_wishart_entropy_monte_carlo():
    rng = np.random.default_rng(5)
    q = normal_wishart_param([0.5, -1.0], 2.0, random_spd(rng, 2, 0.5), 6.0)
    mu, L = sample_nw(q, 100_000, rng)
    lp = nw_logpdf(q, mu, L)
    se = lp.std() / np.sqrt(len(lp))
    assert abs(entropy(q) - (-lp.mean())) < 4 * se


def _knn_entropy(X, k=3):
    """Kozachenko-Leonenko nearest-neighbour entropy estimate in nats."""
    from scipy.special import gammaln

    n, d = X.shape
    r = cKDTree(X).query(X, k + 1)[0][:, -1]
    log_vd = 0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1)
    return sp_digamma(n) - sp_digamma(k) + log_vd + d * np.mean(np.log(r))


def test_gaussian_has_maximum_entropy_among_moment_matched():
    """A moment-matched Gaussian never has less entropy than the sample it fits."""
    rng = np.random.default_rng(11)
    for _ in range(100):
        d = int(rng.integers(1, 3))
        n_comp = int(rng.integers(2, 4))
        means = rng.normal(0, 3, (n_comp, d))
        labels = rng.integers(0, n_comp, 2000)
        X = means[labels] + rng.standard_normal((2000, d)) * rng.uniform(0.3, 1.5, n_comp)[labels, None]
        C = np.atleast_2d(np.cov(X, rowvar=False))
        h_gauss = entropy(mvn_param(X.mean(axis=0), np.linalg.inv(C)))
        assert h_gauss >= _knn_entropy(X) - 0.05


# ---------------------------------------------------------------------------
# KL divergence


def test_kl_unit_gaussians():
    assert kl_divergence(mvn_param([1.0], [[1.0]]), mvn_param([0.0], [[1.0]])) == pytest.approx(0.5, abs=1e-14)


def test_kl_beta_matches_quadrature():
    q, p = stats.beta(2, 2), stats.beta(1, 1)
    val, _ = integrate.quad(lambda x: q.pdf(x) * (q.logpdf(x) - p.logpdf(x)), 0, 1)
    assert kl_divergence(dirichlet_param([2.0, 2.0]), dirichlet_param([1.0, 1.0])) == pytest.approx(val, abs=1e-3)


def test_kl_beta_matches_monte_carlo():
    rng = np.random.default_rng(12)
    x = rng.beta(2.0, 2.0, size=1_000_000)
    lr = stats.beta(2, 2).logpdf(x) - stats.beta(1, 1).logpdf(x)
    assert kl_divergence(dirichlet_param([2.0, 2.0]), dirichlet_param([1.0, 1.0])) == pytest.approx(lr.mean(), abs=1e-3)


def test_kl_mvn_matches_monte_carlo():
    rng = np.random.default_rng(6)
    Pq, Pp = random_spd(rng, 2), random_spd(rng, 2)
    mq, mp = rng.standard_normal(2), rng.standard_normal(2)
    x = rng.multivariate_normal(mq, np.linalg.inv(Pq), size=400_000)
    lr = (stats.multivariate_normal(mq, np.linalg.inv(Pq)).logpdf(x)
          - stats.multivariate_normal(mp, np.linalg.inv(Pp)).logpdf(x))
    kl = kl_divergence(mvn_param(mq, Pq), mvn_param(mp, Pp))
    assert abs(kl - lr.mean()) < 4 * lr.std() / np.sqrt(len(lr))


def test_kl_normal_wishart_matches_monte_carlo():
    rng = np.random.default_rng(7)
    q = normal_wishart_param([0.3, 0.1], 3.0, random_spd(rng, 2, 0.5), 8.0)
    p = normal_wishart_param([0.0, 0.0], 1.0, random_spd(rng, 2, 0.3), 4.0)
    mu, L = sample_nw(q, 100_000, rng)
    lr = nw_logpdf(q, mu, L) - nw_logpdf(p, mu, L)
    assert abs(kl_divergence(q, p) - lr.mean()) < 4 * lr.std() / np.sqrt(len(lr))


@pytest.mark.parametrize("kind", ["dirichlet", "mvn", "normal_wishart"])
def test_kl_self_zero_and_nonnegative(kind):
    rng = np.random.default_rng(8)
    q = random_params(kind, 1000, rng)
    p = random_params(kind, 1000, rng)
    assert np.max(np.abs(kl_divergence(q, q))) < 1e-10
    assert np.min(kl_divergence(q, p)) >= -1e-10


def test_kl_family_mismatch():
    with pytest.raises(ContractError):
        kl_divergence(dirichlet_param([1.0, 2.0]), mvn_param([0.0], [[1.0]]))


# ---------------------------------------------------------------------------
# domain projection


def test_project_leaves_valid_dirichlet_alone():
    q = dirichlet_param([2.0, 3.0, 5.0])
    assert project_to_domain(q, DomainFloor(dirichlet_min=1e-6)) is q


def test_project_clamps_dirichlet():
    q = dirichlet_param([-0.5, 2.0])
    out = dirichlet_concentration(project_to_domain(q, DomainFloor(dirichlet_min=1e-6)))
    np.testing.assert_allclose(out, [1e-6, 2.0], rtol=0, atol=1e-15)


def test_project_floors_eigenvalues_keeping_vectors():
    rng = np.random.default_rng(9)
    Q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    P = Q @ np.diag([1.0, -0.1]) @ Q.T
    h = np.zeros(2)
    q = NaturalParam(MultivariateGaussian(2), np.concatenate([h, pack_sym(-0.5 * P)]))
    P2 = mvn_precision(project_to_domain(q, DomainFloor(eig_min=1e-8)))
    w, V = np.linalg.eigh(P2)
    np.testing.assert_allclose(np.sort(w), [1e-8, 1.0], atol=1e-12)
    np.testing.assert_allclose(np.abs(V.T @ Q), np.eye(2)[:, ::-1] if abs(V[:, 0] @ Q[:, 0]) < 0.5 else np.eye(2),
                               atol=1e-10)


def test_project_repairs_normal_wishart():
    vals = normal_wishart_param([0.0, 0.0], 1.0, np.eye(2), 4.0).values.copy()
    vals[-1] = 0.5  # dof below d - 1
    vals[0] = -1.0  # negative mean precision
    out = project_to_domain(NaturalParam(NormalWishart(2), vals))
    _, beta, W, nu = normal_wishart_params(out)
    assert nu >= 1.0 + DEFAULT_FLOOR.dof_margin - 1e-15
    assert beta > 0
    assert np.all(np.linalg.eigvalsh(W) > 0)


def test_project_rejects_non_finite():
    with pytest.raises(InvalidParameterError):
        project_to_domain(NaturalParam(Dirichlet(2), np.array([np.nan, 0.0])))


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["dirichlet", "mvn", "normal_wishart"]), st.integers(0, 2**31 - 1))
def test_project_is_idempotent(kind, seed):
    rng = np.random.default_rng(seed)
    size = Family(kind, 2 if kind != "dirichlet" else 3).size
    lam = NaturalParam(Family(kind, 2 if kind != "dirichlet" else 3), rng.normal(0, 3, (4, size)))
    once = project_to_domain(lam)
    twice = project_to_domain(once)
    assert np.array_equal(once.values, twice.values)
