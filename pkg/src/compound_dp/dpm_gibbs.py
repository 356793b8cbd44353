"""Collapsed Gibbs sampling for conjugate Dirichlet-process mixtures.

Two kernels are supported:

* ``ExponentialGamma`` -- x ~ Exp(rate), rate ~ Gamma(shape, rate0);
  used for interarrival times.
* ``GaussianNIG`` -- x_d ~ N(mean_d, var_d) independently per dimension,
  (mean_d, var_d) ~ Normal-Inverse-Gamma; used for planar coordinates.

Cluster parameters are integrated out, so the chain only moves the
assignments (Neal 2000, algorithm 3). Each cluster keeps its count, sum and
sum of squares, updated incrementally.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import DataError, DomainError


@dataclass(frozen=True)
class ExponentialGamma:
    shape: float = 1.0
    rate: float = 8.0
    dims = 1

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError("ExponentialGamma hyperparameters must be positive")

    def validate(self, x):
        bad = np.nonzero(~(x[:, 0] > 0))[0]
        if bad.size:
            raise DataError(f"exponential kernel needs positive data; row {int(bad[0])} is {x[bad[0], 0]!r}")

    def pred_params(self, count, total, total_sq):
        """Cached quantities of one cluster's predictive: Lomax(shape a, scale b)."""
        a = self.shape + count
        b = self.rate + total[0]
        return (math.log(a) + a * math.log(b), a + 1.0, b)

    @staticmethod
    def log_pred(x, P):
        return P[:, 0] - P[:, 1] * np.log(P[:, 2] + x[0])

    def log_predictive(self, x, counts, sums, sumsq):
        """log p(x | cluster stats) for every cluster; x has shape (d,)."""
        a = self.shape + counts
        b = self.rate + sums[:, 0]
        return np.log(a) + a * np.log(b) - (a + 1) * np.log(b + x[0])

    def log_predictive_grid(self, grid, counts, sums, sumsq):
        """Rows: grid points, columns: clusters."""
        a = self.shape + counts
        b = self.rate + sums[:, 0]
        g = np.asarray(grid, float).reshape(-1, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a) + a * np.log(b) - (a + 1) * np.log(b + g)
        return np.where(g >= 0, out, -np.inf)

    def posterior_sample(self, counts, sums, sumsq, rng):
        return rng.gamma(self.shape + counts, 1.0 / (self.rate + sums[:, 0]))[:, None]

    def sample_data(self, params, rng):
        return rng.exponential(1.0 / params[:, 0])[:, None]

    def prior_sample(self, size, rng):
        return rng.gamma(self.shape, 1.0 / self.rate, size)[:, None]


@dataclass(frozen=True)
class GaussianNIG:
    m0: tuple = (0.0,)
    kappa0: tuple = (0.01,)
    a0: tuple = (2.0,)
    b0: tuple = (1.0,)

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(v, float)) for v in (self.m0, self.kappa0, self.a0, self.b0)]
        d = max(a.size for a in arrs)
        arrs = [np.broadcast_to(a, (d,)).copy() for a in arrs]
        for name, a in zip(("m0", "kappa0", "a0", "b0"), arrs):
            object.__setattr__(self, name, tuple(a.tolist()))
        if min(min(self.kappa0), min(self.a0), min(self.b0)) <= 0:
            raise DomainError("GaussianNIG needs kappa0, a0, b0 > 0")

    @property
    def dims(self):
        return len(self.m0)

    def validate(self, x):
        if x.shape[1] != self.dims:
            raise DataError(f"Gaussian kernel expects {self.dims} columns, got {x.shape[1]}")

    def _post(self, counts, sums, sumsq):
        m0, k0, a0, b0 = (np.asarray(v) for v in (self.m0, self.kappa0, self.a0, self.b0))
        n = counts[:, None]
        kn = k0 + n
        mn = (k0 * m0 + sums) / kn
        an = a0 + n / 2
        bn = b0 + 0.5 * (sumsq + k0 * m0 ** 2 - kn * mn ** 2)
        return mn, kn, an, np.maximum(bn, 1e-300)

    def _t_logpdf(self, x, mn, kn, an, bn):
        nu = 2 * an
        scale2 = bn * (kn + 1) / (an * kn)
        z = (x - mn) ** 2 / scale2
        return (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * math.pi * scale2)
                - (nu + 1) / 2 * np.log1p(z / nu))

    def pred_params(self, count, total, total_sq):
        """Per dimension: log normalizer, (nu+1)/2, location, nu * scale^2 of the Student-t predictive."""
        out = []
        lognorm = 0.0
        for d in range(len(self.m0)):
            m0, k0, a0, b0 = self.m0[d], self.kappa0[d], self.a0[d], self.b0[d]
            kn = k0 + count
            mn = (k0 * m0 + total[d]) / kn
            an = a0 + count / 2
            bn = max(b0 + 0.5 * (total_sq[d] + k0 * m0 * m0 - kn * mn * mn), 1e-300)
            nu = 2 * an
            scale2 = bn * (kn + 1) / (an * kn)
            lognorm += math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2) - 0.5 * math.log(nu * math.pi * scale2)
            out.extend(((nu + 1) / 2, mn, nu * scale2))
        return (lognorm, *out)

    @staticmethod
    def log_pred(x, P):
        out = P[:, 0].copy()
        for d in range(x.size):
            h, loc, s = P[:, 1 + 3 * d], P[:, 2 + 3 * d], P[:, 3 + 3 * d]
            out -= h * np.log1p((x[d] - loc) ** 2 / s)
        return out

    def log_predictive(self, x, counts, sums, sumsq):
        mn, kn, an, bn = self._post(counts, sums, sumsq)
        return self._t_logpdf(x[None, :], mn, kn, an, bn).sum(axis=1)

    def log_predictive_grid(self, grid, counts, sums, sumsq):
        g = np.asarray(grid, float).reshape(-1, self.dims)
        mn, kn, an, bn = self._post(counts, sums, sumsq)
        return self._t_logpdf(g[:, None, :], mn[None], kn[None], an[None], bn[None]).sum(axis=2)

    def posterior_sample(self, counts, sums, sumsq, rng):
        mn, kn, an, bn = self._post(counts, sums, sumsq)
        var = bn / rng.gamma(an, 1.0)
        mean = rng.normal(mn, np.sqrt(var / kn))
        return np.concatenate([mean, var], axis=1)

    def sample_data(self, params, rng):
        d = self.dims
        return rng.normal(params[:, :d], np.sqrt(params[:, d:]))

    def prior_sample(self, size, rng):
        zeros = np.zeros((size, self.dims))
        return self.posterior_sample(np.zeros(size), zeros, zeros, rng)


@dataclass(frozen=True)
class DpmSpec:
    alpha: float
    kernel: ExponentialGamma | GaussianNIG

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("DPM precision alpha must be positive")

    @property
    def dims(self):
        return self.kernel.dims


@dataclass(frozen=True, eq=False)
class ClusterState:
    """Snapshot of the sampler after a sweep. Labels are contiguous 0..K-1."""

    assignments: np.ndarray
    counts: np.ndarray
    sums: np.ndarray
    sumsq: np.ndarray
    iteration: int

    @property
    def n_clusters(self) -> int:
        return int(self.counts.size)


def cluster_statistics(x, assignments):
    """Recompute (counts, sums, sumsq) from scratch."""
    x = np.asarray(x, float).reshape(len(assignments), -1)
    k = int(assignments.max()) + 1
    counts = np.bincount(assignments, minlength=k).astype(float)
    sums = np.zeros((k, x.shape[1]))
    sumsq = np.zeros((k, x.shape[1]))
    np.add.at(sums, assignments, x)
    np.add.at(sumsq, assignments, x * x)
    return counts, sums, sumsq


class _Sampler:
    """Assignment state with per-cluster statistics in preallocated arrays.

    Rows ``0..K-1`` are live; ``P`` caches each cluster's predictive
    parameters and is refreshed whenever that cluster's statistics change.
    """

    def __init__(self, x, spec, rng, assignments=None):
        self.spec = spec
        self.rng = rng
        n = x.shape[0]
        self.z = np.zeros(n, dtype=np.int64) if assignments is None else np.asarray(assignments).copy()
        self.set_data(x)

    def set_data(self, x):
        self.x = x
        n, d = x.shape
        counts, sums, sumsq = cluster_statistics(x, self.z)
        self.K = counts.size
        self.counts = np.zeros(n + 1)
        self.sums = np.zeros((n + 1, d))
        self.sumsq = np.zeros((n + 1, d))
        self.counts[:self.K], self.sums[:self.K], self.sumsq[:self.K] = counts, sums, sumsq
        kernel = self.spec.kernel
        width = len(kernel.pred_params(0.0, np.zeros(d), np.zeros(d)))
        self.P = np.zeros((n + 1, width))
        for c in range(self.K):
            self._refresh(c)
        zero = np.zeros(d)
        prior = np.array([kernel.pred_params(0.0, zero, zero)])
        self.prior_logs = np.array([kernel.log_pred(xi, prior)[0] for xi in x])

    def _refresh(self, c):
        self.P[c] = self.spec.kernel.pred_params(self.counts[c], self.sums[c], self.sumsq[c])

    def _move_last_to(self, c):
        last = self.K - 1
        if c != last:
            self.z[self.z == last] = c
            for arr in (self.counts, self.sums, self.sumsq, self.P):
                arr[c] = arr[last]
        self.counts[last] = 0.0
        self.sums[last] = 0.0
        self.sumsq[last] = 0.0
        self.K = last

    def sweep(self):
        log_pred = self.spec.kernel.log_pred
        log_alpha = math.log(self.spec.alpha)
        rng = self.rng
        u = rng.random(self.x.shape[0])
        for i in range(self.x.shape[0]):
            xi = self.x[i]
            c = self.z[i]
            self.counts[c] -= 1
            self.sums[c] -= xi
            self.sumsq[c] -= xi * xi
            if self.counts[c] == 0:
                self._move_last_to(c)
            else:
                self._refresh(c)
            K = self.K
            logp = np.empty(K + 1)
            logp[:K] = np.log(self.counts[:K]) + log_pred(xi, self.P[:K])
            logp[K] = log_alpha + self.prior_logs[i]
            cum = np.cumsum(np.exp(logp - logp.max()))
            new = min(int(np.searchsorted(cum, u[i] * cum[-1], side="right")), K)
            if new == K:
                self.K += 1
            self.z[i] = new
            self.counts[new] += 1
            self.sums[new] += xi
            self.sumsq[new] += xi * xi
            self._refresh(new)

    def snapshot(self, it):
        K = self.K
        return ClusterState(self.z.copy(), self.counts[:K].copy(), self.sums[:K].copy(),
                            self.sumsq[:K].copy(), it)


def _as_data(data, spec):
    x = np.asarray(data, float)
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    if x.shape[0] == 0:
        raise DataError("DPM fit needs at least one observation")
    if not np.all(np.isfinite(x)):
        row = int(np.nonzero(~np.isfinite(x).all(axis=1))[0][0])
        raise DataError(f"non-finite observation in row {row}")
    spec.kernel.validate(x)
    return x


@dataclass(frozen=True)
class PredictiveCurve:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    k_counts: np.ndarray


@dataclass(frozen=True)
class GibbsResult:
    states: list
    k_trace: np.ndarray
    predictive: PredictiveCurve | None
    settings: dict = field(default_factory=dict)


def gibbs_run(data, spec: DpmSpec, iters: int = 2000, burn_in: int = 1000, thin: int = 2,
              rng: np.random.Generator | None = None, grid=None, init=None) -> GibbsResult:
    """Run one chain: ``burn_in`` sweeps, then ``iters`` sweeps keeping every ``thin``-th.

    ``k_trace`` records the cluster count after every sweep, burn-in included.
    For one-dimensional data a predictive curve is computed on ``grid``
    (or a default grid spanning the data) when at least 30 states are kept.
    """
    if iters < 1 or burn_in < 0 or thin < 1:
        raise DomainError("need iters >= 1, burn_in >= 0, thin >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    x = _as_data(data, spec)
    sampler = _Sampler(x, spec, rng, init)
    states, trace = [], np.empty(burn_in + iters, dtype=np.int64)
    for it in range(burn_in + iters):
        sampler.sweep()
        trace[it] = sampler.K
        if it >= burn_in and (it - burn_in + 1) % thin == 0:
            states.append(sampler.snapshot(it))
    predictive = None
    if spec.dims == 1 and len(states) >= 30:
        predictive = predictive_density(states, spec, default_grid(x[:, 0], spec) if grid is None else grid)
    settings = {"iters": iters, "burn_in": burn_in, "thin": thin, "alpha": spec.alpha}
    return GibbsResult(states, trace, predictive, settings)


def default_grid(x, spec, size=200):
    lo, hi = float(np.min(x)), float(np.max(x))
    if isinstance(spec.kernel, ExponentialGamma):
        # wide enough for the heavy prior-predictive tail
        return np.linspace(0.0, hi * 4.0, size)
    pad = 0.1 * (hi - lo) + 1.0
    return np.linspace(lo - pad, hi + pad, size)


def _run_chain(args):
    data, spec, iters, burn_in, thin, seed, grid = args
    return gibbs_run(data, spec, iters, burn_in, thin, np.random.default_rng(seed), grid=grid)


def run_chains(data, spec: DpmSpec, iters=2000, burn_in=1000, thin=2, seed=0, chains=1, workers=1, grid=None):
    """Independent chains seeded from ``SeedSequence(seed)``; results do not depend on ``workers``."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(chains)
    jobs = [(data, spec, iters, burn_in, thin, s, grid) for s in seeds]
    if workers > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_chain, jobs))
    return [_run_chain(job) for job in jobs]


def predictive_density(states, spec: DpmSpec, grid, level: float = 0.95) -> PredictiveCurve:
    """Average posterior predictive density with a pointwise credible band.

    Each state contributes sum_c n_c/(alpha+n) p(x | cluster c) plus
    alpha/(alpha+n) times the prior predictive.
    """
    if len(states) == 0:
        raise DomainError("predictive_density needs at least one state")
    kernel, alpha = spec.kernel, spec.alpha
    grid = np.asarray(grid, float)
    d = spec.dims
    zero1 = np.zeros(1)
    zerod = np.zeros((1, d))
    prior = np.exp(kernel.log_predictive_grid(grid, zero1, zerod, zerod)[:, 0])
    dens = np.empty((len(states), prior.size))
    for k, st in enumerate(states):
        n = st.counts.sum()
        comp = np.exp(kernel.log_predictive_grid(grid, st.counts, st.sums, st.sumsq))
        dens[k] = (comp @ st.counts + alpha * prior) / (alpha + n)
    tail = 100 * (1 - level) / 2
    lower, upper = np.percentile(dens, [tail, 100 - tail], axis=0)
    mean = dens.mean(axis=0)
    return PredictiveCurve(grid, mean, np.minimum(lower, mean), np.maximum(upper, mean),
                           np.array([st.n_clusters for st in states]))


@dataclass(frozen=True)
class ClusterSummary:
    coclustering: np.ndarray
    labels: np.ndarray
    state_index: int
    loss: float


def coclustering_matrix(assignments) -> np.ndarray:
    z = np.atleast_2d(np.asarray(assignments))
    out = np.zeros((z.shape[1], z.shape[1]))
    for row in z:
        out += row[:, None] == row[None, :]
    return out / z.shape[0]


def cluster_summary(states) -> ClusterSummary:
    """Posterior co-clustering frequencies and the visited partition closest to them.

    The point estimate minimizes the squared distance between a partition's
    co-membership matrix and the co-clustering matrix (least-squares
    clustering).
    """
    z = np.array([st.assignments if isinstance(st, ClusterState) else st for st in states])
    if z.size == 0:
        raise DomainError("cluster_summary needs at least one state")
    psm = coclustering_matrix(z)
    losses = np.array([np.sum(((row[:, None] == row[None, :]) - psm) ** 2) for row in z])
    best = int(np.argmin(losses))
    return ClusterSummary(psm, relabel(z[best]), best, float(losses[best]))


def relabel(labels) -> np.ndarray:
    """Canonical labels: clusters numbered by first appearance."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv]


def rand_index(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    iu = np.triu_indices(a.size, 1)
    return float(np.mean(same_a[iu] == same_b[iu]))


def crp_cluster_count_law(n: int, alpha: float) -> np.ndarray:
    """P(K = k) for k = 0..n under the Chinese restaurant process, via Stirling numbers."""
    # |s(n, k)| alpha^k / (alpha)_n, built by the recursion on customers
    law = np.zeros(n + 1)
    law[0] = 1.0
    for m in range(n):
        nxt = np.zeros(n + 1)
        nxt[1:] += law[:-1] * alpha / (alpha + m)
        nxt += law * m / (alpha + m)
        law = nxt
    return law


def geweke_cluster_counts(n: int, spec: DpmSpec, iters: int, rng: np.random.Generator):
    """Successive-conditional simulator for the cluster count K.

    Starting from an exact prior draw, it alternates (i) cluster parameters
    given assignments and data, (ii) data given assignments and parameters,
    (iii) one collapsed Gibbs sweep. Every step leaves the joint prior
    invariant, so the K trace must follow the CRP law of K.
    """
    kernel = spec.kernel
    z = np.zeros(n, dtype=np.int64)
    k = 0
    for i in range(n):
        p = np.append(np.bincount(z[:i], minlength=k)[:k], spec.alpha)
        c = int(rng.choice(k + 1, p=p / p.sum()))
        z[i] = c
        k = max(k, c + 1)
    params = kernel.prior_sample(k, rng)
    x = kernel.sample_data(params[z], rng)
    ks = np.empty(iters, dtype=np.int64)
    sampler = _Sampler(x, spec, rng, z)
    for it in range(iters):
        K = sampler.K
        params = kernel.posterior_sample(sampler.counts[:K], sampler.sums[:K], sampler.sumsq[:K], rng)
        sampler.set_data(kernel.sample_data(params[sampler.z], rng))
        sampler.sweep()
        ks[it] = sampler.K
    return ks
