"""Batch VI, SVI and SVI+ updates of global natural parameters.

SVI+ multiplies each datum's expected sufficient statistic by a scalar weight
``1 + eps_n - mean(eps)`` with ``eps_n ~ N(0, |S|/M - 1)``.  The batch size
``|S|`` sets how Gaussian the gradient noise is; the effective batch size
``M <= |S|`` sets its variance.  ``M == |S|`` is exactly SVI, and ``|S| == N``
with ``M == N`` is batch VI.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, InvalidParameterError, NumericalError
from .expfam import DEFAULT_FLOOR, DomainFloor, NaturalParam, project_to_domain


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Constant:
    """Constant step size ``rho``."""

    rho: float

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ContractError(f"constant step size must lie in (0, 1], got {self.rho}")

    def __call__(self, t: int) -> float:
        return float(self.rho)


@dataclass(frozen=True)
class PowerDecay:
    """Robbins-Monro step size ``(tau0 + t) ** -kappa``."""

    tau0: float = 1.0
    kappa: float = 0.7

    def __post_init__(self):
        if self.tau0 < 0:
            raise ContractError("tau0 must be >= 0")
        if not 0.5 < self.kappa <= 1:
            raise ContractError(f"kappa must lie in (0.5, 1], got {self.kappa}")

    def __call__(self, t: int) -> float:
        return float((self.tau0 + t) ** -self.kappa)


StepSchedule = Constant | PowerDecay


@dataclass(frozen=True)
class ConstantM:
    """Fixed effective batch size.  ``M=None`` means ``M = |S|`` (plain SVI)."""

    M: int | None = None

    def __post_init__(self):
        if self.M is not None and self.M < 1:
            raise ContractError("effective batch size must be >= 1")

    def __call__(self, t: int) -> float:
        return np.inf if self.M is None else self.M


@dataclass(frozen=True)
class LinearRamp:
    """``M_t = min(slope * t, cap)``."""

    slope: int
    cap: int | None = None

    def __post_init__(self):
        if self.slope < 1:
            raise ContractError("ramp slope must be >= 1")

    def __call__(self, t: int) -> float:
        m = self.slope * t
        return m if self.cap is None else min(m, self.cap)


EffectiveBatchSchedule = ConstantM | LinearRamp


def step_size(t: int, schedule: StepSchedule) -> float:
    if t < 1:
        raise ContractError("iterations are 1-based")
    return schedule(t)


def effective_m(t: int, schedule: EffectiveBatchSchedule, batch_size: int) -> int:
    if t < 1:
        raise ContractError("iterations are 1-based")
    return int(max(1, min(schedule(t), batch_size)))


# ---------------------------------------------------------------------------
# randomness


def stream(master_seed: int, name: str, t: int = 0) -> np.random.Generator:
    """Independent generator keyed by ``(master_seed, name, t)``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), key, int(t)]))


def sample_batch(N: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of ``batch_size`` distinct indices, returned sorted."""
    if not 1 <= batch_size <= N:
        raise ContractError(f"batch_size must lie in [1, N={N}], got {batch_size}")
    if batch_size == N:
        return np.arange(N)
    return np.sort(rng.choice(N, size=batch_size, replace=False))


# ---------------------------------------------------------------------------
# SVI+ noise


def alpha(actual_batch: int, effective_batch: int) -> float:
    """Added-noise variance multiplier ``(|S| - M) / (M |S|)``."""
    S, M = actual_batch, effective_batch
    if not 1 <= M <= S:
        raise ContractError(f"need 1 <= M <= |S|, got M={M}, |S|={S}")
    return (S - M) / (M * S)


@dataclass(frozen=True, eq=False)
class NoiseWeights:
    weights: np.ndarray
    sigma2: float
    eps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.weights)


def draw_noise_weights(batch_size: int, M: int, rng: np.random.Generator) -> NoiseWeights:
    """Per-datum multipliers ``1 + eps_n - mean(eps)``; no draws when ``M == batch_size``."""
    if not 1 <= M <= batch_size:
        raise ContractError(f"need 1 <= M <= |S|, got M={M}, |S|={batch_size}")
    if M == batch_size:
        return NoiseWeights(np.ones(batch_size), 0.0)
    sigma2 = batch_size / M - 1.0
    eps = rng.normal(0.0, np.sqrt(sigma2), size=batch_size)
    return NoiseWeights(1.0 + (eps - eps.mean()), sigma2, eps)


def draw_grouped_noise_weights(labels, M: int, rng: np.random.Generator) -> NoiseWeights:
    """Noise weights drawn separately within each label group.

    Group ``g`` with ``n_g`` members is treated as its own batch with
    effective size ``min(M, n_g)``; groups with ``n_g <= M`` get weight 1 and
    no draws are consumed when every group is that small.
    """
    labels = np.asarray(labels)
    if M < 1:
        raise ContractError("effective batch size must be >= 1")
    _, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    n = counts[inv].astype(float)
    noisy = n > M
    if not np.any(noisy):
        return NoiseWeights(np.ones(len(labels)), 0.0)
    sigma2 = np.where(noisy, n / M - 1.0, 0.0)
    eps = rng.standard_normal(len(labels)) * np.sqrt(sigma2)
    means = np.bincount(inv, weights=eps) / counts
    return NoiseWeights(1.0 + (eps - means[inv]), float(sigma2.max()), eps)


def svi_plus_gradient(stats, weights, N: int) -> np.ndarray:
    """``(N / |S|) * sum_n w_n stats_n`` for a ``(|S|, D)`` stack of statistics."""
    stats = np.ascontiguousarray(stats, dtype=float)
    w = weights.weights if isinstance(weights, NoiseWeights) else np.asarray(weights, dtype=float)
    if stats.ndim != 2 or len(stats) == 0:
        raise ContractError("stats must be a non-empty (|S|, D) array")
    if len(w) != len(stats):
        raise ContractError(f"{len(w)} weights for {len(stats)} statistics")
    return (N / len(stats)) * kernels.weighted_sum(np.ascontiguousarray(w), stats)


def svi_plus_gradient_centered(stats, eps, N: int) -> np.ndarray:
    """Same gradient built from batch-centred statistics times raw ``eps``."""
    stats = np.asarray(stats, dtype=float)
    eps = np.asarray(eps, dtype=float)
    mu = stats.mean(axis=0)
    S = len(stats)
    return N * mu + (N / S) * ((stats - mu) * eps[:, None]).sum(axis=0)


# ---------------------------------------------------------------------------
# update


@dataclass(frozen=True, eq=False)
class UpdateState:
    lam: NaturalParam
    eta: NaturalParam
    t: int = 0
    N: int = 1

    def __post_init__(self):
        if self.lam.family != self.eta.family:
            raise ContractError("lambda and eta must share a family")
        if self.t < 0 or self.N < 1:
            raise ContractError("need t >= 0 and N >= 1")


def apply_update(
    state: UpdateState, grad, rho: float, floor: DomainFloor = DEFAULT_FLOOR
) -> UpdateState:
    """``lambda <- project((1 - rho) lambda + rho (eta + grad))``."""
    if not 0 < rho <= 1:
        raise ContractError(f"step size must lie in (0, 1], got {rho}")
    g = grad.values if isinstance(grad, NaturalParam) else np.asarray(grad, dtype=float)
    lam = state.lam.values
    eta = state.eta.values
    if g.shape[-1] != lam.shape[-1]:
        raise ContractError(f"gradient layout {g.shape} does not match {lam.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient", iteration=state.t + 1)
    if rho == 1.0:
        new = eta + g
    else:
        new = (1.0 - rho) * lam + rho * (eta + g)
    new = np.broadcast_to(new, lam.shape)
    lam_new = project_to_domain(NaturalParam(state.lam.family, new), floor)
    return UpdateState(lam_new, state.eta, state.t + 1, state.N)


# ---------------------------------------------------------------------------
# driver


ALGORITHMS = ("batch", "svi", "svi+")


@dataclass(frozen=True)
class Settings:
    """Resolved per-run inference settings."""

    algorithm: str = "svi+"
    batch_size: int | None = None
    m_schedule: EffectiveBatchSchedule = ConstantM()
    step: StepSchedule = PowerDecay()
    iters: int = 100
    seed: int = 0
    eval_every: int | None = None

    def resolve(self, N: int) -> "Settings":
        """Apply the algorithm's forced settings and validate against ``N``."""
        from .errors import ConfigError

        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: unknown value {self.algorithm!r}")
        if self.iters < 1:
            raise ConfigError("iters: must be >= 1")
        if self.algorithm == "batch":
            return Settings("batch", N, ConstantM(), Constant(1.0), self.iters, self.seed,
                            self.eval_every)
        S = N if self.batch_size is None else int(self.batch_size)
        if not 1 <= S <= N:
            raise ConfigError(f"batch_size: {S} must lie in [1, N={N}]")
        m_sched = self.m_schedule
        if self.algorithm == "svi":
            m_sched = ConstantM()
        elif isinstance(m_sched, ConstantM) and m_sched.M is not None and m_sched.M > S:
            raise ConfigError(f"m: effective batch size {m_sched.M} exceeds batch_size {S}")
        return Settings(self.algorithm, S, m_sched, self.step, self.iters, self.seed, self.eval_every)


@dataclass
class TraceRow:
    iteration: int
    wall_ms: float
    elbo: float
    batch_size: int
    M_t: int
    rho_t: float
    seed: int


def fit(model, data, settings: Settings, *, evaluate=None, state=None, floor=None,
        on_row=None):
    """Run the configured loop and return ``(rows, state)``.

    Every iteration samples a batch from the ``batch`` stream, draws noise
    weights from the ``noise`` stream, computes local parameters, and updates
    each group of globals with ``(N / |S|) sum_n w_n E[t_n]``.  ``evaluate``
    maps globals to an objective (default: the model's ELBO on ``data``);
    it runs every ``eval_every`` iterations and after the last one.
    ``floor`` defaults to the model's own ``floor`` attribute when it has one.
    Numerical failures are re-raised tagged with the iteration number.
    """
    if floor is None:
        floor = getattr(model, "floor", DEFAULT_FLOOR)
    N = model.n_data(data)
    s = settings.resolve(N)
    eval_every = s.eval_every or (1 if s.iters <= 1000 else 10)
    priors = model.priors()
    if state is None:
        state = model.init_state(data, stream(s.seed, "init"))
    globals_ = dict(state.globals)
    full_batch = s.batch_size == N
    local_cache = None
    rows = []
    start = time.perf_counter()
    for t in range(1, s.iters + 1):
        try:
            local_cache, idx, M, rho, value = _iterate(
                model, data, s, t, N, priors, globals_, state, floor, local_cache, full_batch,
                evaluate, eval_every,
            )
        except NumericalError as exc:
            if exc.iteration is not None:
                raise
            raise NumericalError(str(exc), iteration=t) from None
        except (np.linalg.LinAlgError, InvalidParameterError) as exc:
            raise NumericalError(str(exc), iteration=t) from None
        if value is not None:
            row = TraceRow(t, (time.perf_counter() - start) * 1e3, value, s.batch_size, M, rho, s.seed)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    state.globals = globals_
    state.batch = idx
    return rows, state


def _iterate(model, data, s, t, N, priors, globals_, state, floor, local_cache, full_batch,
             evaluate, eval_every):
    """One sweep over the update groups; mutates ``globals_`` and ``state`` in place."""
    rho = step_size(t, s.step)
    M = effective_m(t, s.m_schedule, s.batch_size)
    idx = sample_batch(N, s.batch_size, stream(s.seed, "batch", t))
    noise = draw_noise_weights(s.batch_size, M, stream(s.seed, "noise", t))
    for gi, group in enumerate(model.update_groups):
        labels = model.noise_groups(data, idx, group)
        if labels is not None:
            noise = draw_grouped_noise_weights(labels, M, stream(s.seed, f"noise/{gi}", t))
        if local_cache is not None and gi == 0:
            local = local_cache
        else:
            warm = state.local if full_batch else None
            local = model.local_step(data, idx, globals_, init=warm)
        local_cache = None
        state.local = local
        stats = model.suff_stats(data, idx, local, globals_, noise.weights, group)
        for gid in group:
            grad = (N / s.batch_size) * stats[gid]
            upd = apply_update(UpdateState(globals_[gid], priors[gid], t - 1, N), grad, rho, floor)
            globals_[gid] = upd.lam
    value = None
    if t % eval_every == 0 or t == s.iters:
        if evaluate is None:
            if full_batch:
                local_cache = model.local_step(data, idx, globals_, init=state.local)
                state.local = local_cache
                value = model.elbo(data, globals_, local_cache)
            else:
                value = model.elbo(data, globals_)
        else:
            value = evaluate(globals_)
        value = float(value)
        if not np.isfinite(value):
            raise NumericalError("objective is not finite")
    return local_cache, idx, M, rho, value
