"""Monte-Carlo checks of the SVI+ gradient: mean, covariance, Gaussianity, occupancy."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .engine import stream
from .errors import ContractError

CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True, eq=False)
class GradientSample:
    """``R`` replicate gradients ``lambda' / N`` stacked as rows."""

    values: np.ndarray
    batch_size: int
    M: int
    t: int = 0
    model_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or len(v) < 2:
            raise ContractError("need at least 2 replicate rows")
        if not np.all(np.isfinite(v)):
            raise ContractError("replicate gradients must be finite")
        object.__setattr__(self, "values", v)

    @property
    def R(self) -> int:
        return len(self.values)

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.values, rowvar=False))


def _seed_from(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    return int(rng)


def replicate_gradients(stats_all, batch_size: int, M: int, R: int, seed: int,
                        chunk: int | None = None) -> np.ndarray:
    """``(1 / |S|) sum_{n in S} w_n t_n`` for ``R`` independent (batch, noise) draws.

    ``stats_all`` is the ``(N, D)`` stack of per-datum statistics.  Replicates
    are generated in fixed-size chunks, chunk ``c`` drawing from its own
    stream, so the output does not depend on how chunks are scheduled.
    """
    T = np.asarray(stats_all, dtype=float)
    N, D = T.shape
    S = int(batch_size)
    if not 1 <= M <= S <= N:
        raise ContractError(f"need 1 <= M <= |S| <= N, got M={M}, |S|={S}, N={N}")
    if chunk is None:
        chunk = max(1, min(R, CHUNK_ELEMENTS // max(1, S * D)))
    sigma = np.sqrt(S / M - 1.0)
    out = np.empty((R, D))
    for c, lo in enumerate(range(0, R, chunk)):
        n = min(chunk, R - lo)
        rng = stream(seed, "replicates", c)
        if S == N:
            idx = np.broadcast_to(np.arange(N), (n, N))
        else:
            idx = np.argpartition(rng.random((n, N)), S - 1, axis=1)[:, :S]
        if M == S:
            w = np.ones((n, S))
        else:
            eps = rng.standard_normal((n, S)) * sigma
            w = 1.0 + (eps - eps.mean(axis=1, keepdims=True))
        out[lo:lo + n] = np.einsum("rs,rsd->rd", w, T[idx]) / S
    return out


def collect_gradients(model, data, state, batch_size: int, M: int, R: int, rng=0,
                      t: int = 0) -> GradientSample:
    """Replicate SVI+ gradients at frozen globals, scaled per datum.

    Per-datum statistics are computed once for the whole dataset; each
    replicate then draws a batch and noise weights and records
    ``lambda' / N``.
    """
    N = model.n_data(data)
    T = model.flat_datum_stats(data, np.arange(N), state.globals)
    values = replicate_gradients(T, batch_size, M, R, _seed_from(rng))
    return GradientSample(values, int(batch_size), int(M), t, getattr(model, "name", ""))


@dataclass(frozen=True)
class GaussianityReport:
    ks: np.ndarray
    max_ks: float
    energy: float
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def gaussianity(sample, reference_rng=0, rel_tol: float = 1e-12) -> GaussianityReport:
    """KS per coordinate and energy distance against a moment-matched normal.

    Coordinates whose spread is zero (relative to their magnitude) get KS 0
    and are flagged in ``degenerate``.  The energy distance is taken on the
    non-degenerate coordinates after standardizing each one, against an
    equal-size Gaussian sample with the same mean and covariance.
    """
    X = sample.values if isinstance(sample, GradientSample) else np.asarray(sample, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    R = len(X)
    if R < 2:
        raise ContractError("need at least 2 replicates")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(mean), 1.0)
    degenerate = sd <= rel_tol * scale
    ks = np.zeros(X.shape[1])
    live = ~degenerate
    if not np.any(live):
        return GaussianityReport(ks, 0.0, 0.0, degenerate)
    Z = (X[:, live] - mean[live]) / sd[live]
    ks[live] = stats.kstest(Z, "norm", axis=0).statistic
    rng = reference_rng if isinstance(reference_rng, np.random.Generator) else np.random.default_rng(reference_rng)
    C = np.atleast_2d(np.cov(Z, rowvar=False))
    vals, vecs = np.linalg.eigh(C)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    Y = rng.standard_normal(Z.shape) @ root.T
    xy, xx, yy = kernels.energy_terms(np.ascontiguousarray(Z), np.ascontiguousarray(Y))
    energy = max(0.0, 2.0 * xy - xx - yy)
    return GaussianityReport(ks, float(ks.max()), float(energy), degenerate)


@dataclass(frozen=True)
class TrendRow:
    tau: int
    batch_size: int
    max_ks: float
    energy: float
    cov: np.ndarray = field(repr=False, default=None)


def theorem1_trend(model, data, state, M: int, taus, R: int, rng=0, repeats: int = 1):
    """Gaussianity of the SVI+ gradient at ``|S| = tau M`` for each ``tau``.

    Each row averages the max-KS statistic and the energy distance over
    ``repeats`` independent replicate sets and carries the pooled covariance.
    """
    N = model.n_data(data)
    taus = [int(x) for x in taus]
    if M < 1 or any(t < 1 or t * M > N for t in taus):
        raise ContractError(f"every tau * M must lie in [1, N={N}]")
    seed = _seed_from(rng)
    T = model.flat_datum_stats(data, np.arange(N), state.globals)
    rows = []
    for tau in taus:
        ks, en, covs = [], [], []
        for r in range(repeats):
            sub = int(stream(seed, f"trend/{tau}", r).integers(0, 2**63 - 1))
            G = replicate_gradients(T, tau * M, M, R, sub)
            rep = gaussianity(G, stream(seed, f"reference/{tau}", r))
            ks.append(rep.max_ks)
            en.append(rep.energy)
            covs.append(np.atleast_2d(np.cov(G, rowvar=False)))
        rows.append(TrendRow(tau, tau * M, float(np.mean(ks)), float(np.mean(en)),
                             np.mean(covs, axis=0)))
    return rows


# ---------------------------------------------------------------------------
# cluster occupancy


@dataclass(frozen=True)
class Occupancy:
    """Size-sorted mean shares and per-rank cumulative-share summaries.

    ``cumulative`` has one row per rank with columns min, q1, median, q3, max
    across runs.
    """

    mean_shares: np.ndarray
    cumulative: np.ndarray
    shares: np.ndarray


def occupancy_from_labels(label_sets, K: int) -> Occupancy:
    """Occupancy summary from hard assignments, one label vector per run."""
    if len(label_sets) == 0:
        raise ContractError("need at least one run")
    rows = []
    for labels in label_sets:
        labels = np.asarray(labels, dtype=np.int64)
        counts = np.bincount(labels, minlength=K).astype(float)
        rows.append(np.sort(counts / counts.sum())[::-1])
    shares = np.array(rows)
    cum = np.cumsum(shares, axis=1)
    qs = np.quantile(cum, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0).T
    return Occupancy(shares.mean(axis=0), qs, shares)


def cluster_occupancy(model, runs, data) -> Occupancy:
    """Assign each datum to its most responsible cluster in every run and summarize."""
    labels = [model.assignments(data, getattr(r, "globals", r)) for r in runs]
    return occupancy_from_labels(labels, model.K)


def effective_cluster_count(shares, threshold: float = 0.01) -> int:
    """Number of clusters holding more than ``threshold`` of the data."""
    return int(np.sum(np.asarray(shares) > threshold))


# ---------------------------------------------------------------------------
# CSV output


def write_trend_csv(rows, path) -> None:
    """One row per ``(tau, metric)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "batch_size", "metric", "value"])
        for r in rows:
            w.writerow([r.tau, r.batch_size, "max_ks", repr(r.max_ks)])
            w.writerow([r.tau, r.batch_size, "energy", repr(r.energy)])


def write_occupancy_csv(occ: Occupancy, path) -> None:
    """One row per sorted rank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "mean_share", "cum_min", "cum_q1", "cum_median", "cum_q3", "cum_max"])
        for k, (m, q) in enumerate(zip(occ.mean_shares, occ.cumulative), start=1):
            w.writerow([k, repr(float(m)), *(repr(float(v)) for v in q)])
