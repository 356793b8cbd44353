"""Compound Dirichlet processes S_t = X_1 + ... + X_{N_t}.

Interarrival times and marks carry independent Dirichlet-process priors.
In the plain model (CDP) the urn acts on the observables directly; in the
mixture model (CDPM) it acts on kernel parameters and each observable is a
fresh kernel draw given its parameter.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dp_sampling import (DirichletPrior, Gamma, Gaussian, NormalInverseGamma, posterior_update,
                          urn_renewal_counts, urn_sums)
from .errors import CapabilityError, DomainError
from .sums import (CountingLaw, compound_moments, counting_distribution, gaussian_sn_cdf,
                   gaussian_sn_pdf, ph_sum_chain)


@dataclass(frozen=True)
class TruncationPolicy:
    """Which terms of the sum over N_t = n are evaluated.

    Counts above ``max_n`` are dropped, and so are counts whose probability
    does not exceed ``epsilon0``. Both rules may be active at once.
    ``mc_paths`` sets the path count wherever a law has to be simulated.
    """

    max_n: int = 64
    epsilon0: float = 1e-8
    mc_paths: int = 100_000

    def __post_init__(self):
        if self.max_n < 1 or not 0 <= self.epsilon0 < 1 or self.mc_paths < 2:
            raise DomainError("truncation needs max_n >= 1, epsilon0 in [0, 1) and mc_paths >= 2")


@dataclass(frozen=True)
class CdpModel:
    time_prior: DirichletPrior
    mark_prior: DirichletPrior

    def __post_init__(self):
        if not self.time_prior.base.positive:
            raise DomainError(f"time base {self.time_prior.base.kind!r} must be supported on positive reals")

    def to_dict(self):
        return {"type": "cdp", "time": self.time_prior.to_dict(), "mark": self.mark_prior.to_dict()}


class ExponentialKernel:
    """T | rate ~ Exp(rate)."""

    name = "exponential"

    def sample(self, theta, rng):
        return rng.exponential(1.0 / np.asarray(theta).reshape(-1))


class GaussianKernel:
    """X | (mean, variance) ~ N(mean, variance)."""

    name = "gaussian"

    def sample(self, theta, rng):
        theta = np.asarray(theta).reshape(-1, 2)
        return rng.normal(theta[:, 0], np.sqrt(theta[:, 1]))


_KERNELS = {"exponential": ExponentialKernel, "gaussian": GaussianKernel}


@dataclass(frozen=True)
class CdpmModel:
    time_kernel: ExponentialKernel
    time_prior: DirichletPrior
    mark_kernel: GaussianKernel
    mark_prior: DirichletPrior

    def __post_init__(self):
        if not (isinstance(self.time_kernel, ExponentialKernel) and isinstance(self.time_prior.base, Gamma)):
            raise CapabilityError("CDPM time side supports an exponential kernel with a Gamma base only")
        if not (isinstance(self.mark_kernel, GaussianKernel)
                and isinstance(self.mark_prior.base, NormalInverseGamma)):
            raise CapabilityError("CDPM mark side supports a Gaussian kernel with a Normal-Inverse-Gamma base only")

    def to_dict(self):
        return {"type": "cdpm",
                "time": {**self.time_prior.to_dict(), "kernel": self.time_kernel.name},
                "mark": {**self.mark_prior.to_dict(), "kernel": self.mark_kernel.name}}


def model_from_dict(d: dict):
    kind = d.get("type", "cdp")
    if kind == "cdp":
        return CdpModel(DirichletPrior.from_dict(d["time"]), DirichletPrior.from_dict(d["mark"]))
    if kind == "cdpm":
        return CdpmModel(_KERNELS[d["time"].get("kernel", "exponential")](), DirichletPrior.from_dict(d["time"]),
                         _KERNELS[d["mark"].get("kernel", "gaussian")](), DirichletPrior.from_dict(d["mark"]))
    raise DomainError(f"unknown model type {kind!r}")


@dataclass(frozen=True)
class RenewalPath:
    """One realization observed on [0, horizon].

    ``interarrivals`` holds the arrivals strictly before the horizon; the
    first interarrival that reaches it is kept in ``overshoot``.
    """

    interarrivals: np.ndarray
    marks: np.ndarray
    horizon: float
    overshoot: float = field(default=math.nan)

    @property
    def n_t(self) -> int:
        return int(self.interarrivals.size)

    @property
    def s_t(self) -> float:
        return float(self.marks.sum())

    @property
    def arrival_times(self) -> np.ndarray:
        return np.cumsum(self.interarrivals)


def _kernels(model):
    if isinstance(model, CdpmModel):
        return model.time_kernel.sample, model.mark_kernel.sample
    return None, None


def _check_horizon(horizon):
    if not (horizon > 0 and math.isfinite(horizon)):
        raise DomainError(f"horizon must be positive and finite, got {horizon}")


def simulate_path(model, horizon: float, rng: np.random.Generator) -> RenewalPath:
    _check_horizon(horizon)
    tk, mk = _kernels(model)
    counts, trails = urn_renewal_counts(model.time_prior, horizon, 1, rng, kernel=tk, record=True)
    n = int(counts[0])
    _, marks = urn_sums(model.mark_prior, [n], rng, kernel=mk, record=True)
    gaps = trails[0]
    return RenewalPath(gaps[:n], marks[0], horizon, float(gaps[n]))


def simulate_paths(model, horizon: float, size: int, rng: np.random.Generator, record: bool = False):
    """Vectorized path simulation.

    Returns ``(n_t, s_t)`` arrays, or a list of :class:`RenewalPath` when
    ``record`` is set.
    """
    _check_horizon(horizon)
    tk, mk = _kernels(model)
    if not record:
        counts = urn_renewal_counts(model.time_prior, horizon, size, rng, kernel=tk)
        return counts, urn_sums(model.mark_prior, counts, rng, kernel=mk)
    counts, gaps = urn_renewal_counts(model.time_prior, horizon, size, rng, kernel=tk, record=True)
    _, marks = urn_sums(model.mark_prior, counts, rng, kernel=mk, record=True)
    return [RenewalPath(g[:n], m, horizon, float(g[n])) for n, g, m in zip(counts, gaps, marks)]


def _simulate_batch(args):
    model, horizon, size, seed = args
    return simulate_paths(model, horizon, size, np.random.default_rng(seed))


def simulate_paths_batched(model, horizon: float, size: int, seed: int, batch_size: int = 50_000,
                           workers: int = 1):
    """Batched simulation whose output depends on ``seed`` and ``batch_size`` only.

    Each batch draws from its own child of ``SeedSequence(seed)``, so the
    number of worker processes does not change the result.
    """
    sizes = [min(batch_size, size - start) for start in range(0, size, batch_size)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(model, horizon, s, sd) for s, sd in zip(sizes, seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_batch, jobs))
    else:
        parts = [_simulate_batch(job) for job in jobs]
    if not parts:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# --- analytic law of S_t -------------------------------------------------------------


@dataclass(frozen=True)
class StValue:
    """Truncated evaluation with a bound on the omitted probability mass.

    ``se`` is set only when the count law was simulated.
    """

    value: np.ndarray
    bound: float
    counting: CountingLaw
    terms: np.ndarray
    se: float | None = None
    atom_at_zero: float = 0.0


def _selected_terms(counting: CountingLaw, trunc: TruncationPolicy):
    n = np.arange(counting.pmf.size)
    keep = (n >= 1) & (counting.pmf > trunc.epsilon0)
    dropped = float(counting.pmf[(n >= 1) & ~keep].sum()) + counting.tail_mass
    return n[keep], dropped


def _require_cdp(model):
    if not isinstance(model, CdpModel):
        raise CapabilityError("analytic S_t evaluation is available for CDP models only; "
                              "use simulation for CDPM models")


def _mark_law(mark: DirichletPrior, ns, s, what):
    """Rows: s values, columns: the selected counts."""
    base = mark.base
    if ns.size == 0:
        return np.zeros((np.size(s), 0))
    if isinstance(base, Gaussian):
        fn = gaussian_sn_cdf if what == "cdf" else gaussian_sn_pdf
        n_max = int(ns.max())
        return np.stack([fn(int(n), mark.alpha, base.mu, base.sigma2, s, n_max=n_max) for n in ns], axis=-1)
    ph = base.as_phase_type()
    if ph is None:
        raise CapabilityError(f"no analytic law of S_n for a {base.kind} mark base")
    chain = ph_sum_chain(ph, mark.alpha, int(ns.max()))
    vals = chain.cdf(s) if what == "cdf" else chain.pdf(s)
    return vals[:, ns - 1]


def _counting(model, t, trunc, rng):
    counting = counting_distribution(model.time_prior, t, max_n=trunc.max_n, mc_paths=trunc.mc_paths, rng=rng)
    se = None if counting.se is None else float(np.sqrt(np.sum(counting.se ** 2)))
    return counting, se


def st_cdf(model: CdpModel, t: float, s, trunc: TruncationPolicy = TruncationPolicy(),
           rng: np.random.Generator | None = None) -> StValue:
    """P(S_t <= s) as the truncated sum over n of P(N_t = n) P(S_n <= s).

    The event {N_t = 0} contributes P(N_t = 0) 1{s >= 0}. ``bound`` is the
    total probability of the omitted counts, which bounds the absolute error.

    CDPM models have no closed form; their CDF is the empirical CDF of
    ``trunc.mc_paths`` simulated paths and ``bound`` is the 99% DKW radius.
    """
    _check_horizon(t)
    if isinstance(model, CdpmModel):
        return _st_cdf_simulated(model, t, s, trunc, rng)
    _require_cdp(model)
    counting, se = _counting(model, t, trunc, rng)
    ns, dropped = _selected_terms(counting, trunc)
    s_arr = np.atleast_1d(np.asarray(s, float))
    law = _mark_law(model.mark_prior, ns, s_arr, "cdf")
    value = counting.pmf[0] * (s_arr >= 0) + law @ counting.pmf[ns]
    value = np.clip(value, 0.0, 1.0)
    return StValue(value if np.ndim(s) else value[0], dropped, counting, ns, se, float(counting.pmf[0]))


def _st_cdf_simulated(model, t, s, trunc, rng):
    rng = rng if rng is not None else np.random.default_rng(0)
    n_t, s_t = simulate_paths(model, t, trunc.mc_paths, rng)
    s_arr = np.atleast_1d(np.asarray(s, float))
    value = np.searchsorted(np.sort(s_t), s_arr, side="right") / s_t.size
    top = min(int(n_t.max()), trunc.max_n)
    freq = np.bincount(np.minimum(n_t, top + 1), minlength=top + 2) / n_t.size
    counting = CountingLaw(t, freq[:top + 1], float(freq[top + 1]), "monte_carlo",
                           np.sqrt(freq[:top + 1] * (1 - freq[:top + 1]) / n_t.size))
    se = float(np.sqrt(np.max(value * (1 - value)) / n_t.size))
    bound = math.sqrt(math.log(2 / 0.01) / (2 * n_t.size))
    return StValue(value if np.ndim(s) else value[0], bound, counting, np.arange(1, top + 1), se,
                   float(freq[0]))


def st_density(model: CdpModel, t: float, s, trunc: TruncationPolicy = TruncationPolicy(),
               rng: np.random.Generator | None = None) -> StValue:
    """Density of the absolutely continuous part of S_t; the atom at 0 is reported separately."""
    _require_cdp(model)
    _check_horizon(t)
    counting, se = _counting(model, t, trunc, rng)
    ns, dropped = _selected_terms(counting, trunc)
    s_arr = np.atleast_1d(np.asarray(s, float))
    value = _mark_law(model.mark_prior, ns, s_arr, "pdf") @ counting.pmf[ns]
    return StValue(value if np.ndim(s) else value[0], dropped, counting, ns, se, float(counting.pmf[0]))


@dataclass(frozen=True)
class StMoments:
    """Raw moments of S_t from the truncated count law.

    Omitted counts enter with weight zero, so for marks with non-negative
    moments the values are lower bounds; ``tail_mass`` is the omitted mass.
    """

    moments: tuple[float, float, float]
    count_moments: tuple[float, float, float]
    tail_mass: float


def st_moments(model: CdpModel, t: float, trunc: TruncationPolicy = TruncationPolicy(),
               rng: np.random.Generator | None = None) -> StMoments:
    _require_cdp(model)
    _check_horizon(t)
    counting = counting_distribution(model.time_prior, t, max_n=trunc.max_n, mc_paths=trunc.mc_paths, rng=rng)
    cm = tuple(counting.moment(k) for k in (1, 2, 3))
    base = model.mark_prior.base
    mu = [base.moment(k) for k in (1, 2, 3)]
    return StMoments(compound_moments(cm, model.mark_prior.alpha, *mu), cm, counting.tail_mass)


def posterior_model(model: CdpModel, sample) -> CdpModel:
    """Update both priors independently from observed (mark, interarrival) pairs."""
    sample = np.asarray(sample, float).reshape(-1, 2)
    if sample.shape[0] == 0:
        raise DomainError("posterior_model needs a non-empty sample")
    marks, times = sample[:, 0], sample[:, 1]
    if np.any(times <= 0):
        raise DomainError("observed interarrival times must be positive")
    return CdpModel(posterior_update(model.time_prior, times).prior,
                    posterior_update(model.mark_prior, marks).prior)
