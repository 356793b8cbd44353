"""Law of S_n = X_1 + ... + X_n when the X_i share a Dirichlet-process prior.

Conditioning on the tie pattern ``v`` of the urn, S_n is a sum of
independent scaled base draws, so its law is a finite mixture over the
partitions of ``n`` with Ewens weights. Two specializations have closed-form
components: Gaussian bases (each component Gaussian) and phase-type bases
(each component phase-type).

The explicit mixtures enumerate all partitions and are limited by the
partition cap. For larger ``n`` the same laws are evaluated exactly by
peeling off the block that holds the first draw (see
:func:`~compound_dp.partitions.first_block_size_probs`), which groups
partitions without listing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply
from scipy.special import erfc, logsumexp

from .dp_sampling import BaseDistribution, DirichletPrior, Empirical, Gaussian, urn_renewal_counts
from .errors import CapabilityError, DomainError, ResourceError
from .partitions import (PartitionMultiplicity, ewens_weight_table, first_block_size_probs,
                         log_rising_factorial, enumerate_partitions, ewens_log_probs)
from .phase_type import PhaseType, ph_partition_block


@dataclass(frozen=True)
class GaussianComponent:
    mean: float
    variance: float

    def cdf(self, x):
        return 0.5 * erfc(-(np.asarray(x, float) - self.mean) / math.sqrt(2 * self.variance))

    def pdf(self, x):
        z = (np.asarray(x, float) - self.mean) ** 2 / self.variance
        return np.exp(-0.5 * z) / math.sqrt(2 * math.pi * self.variance)

    def to_dict(self):
        return {"kind": "gaussian", "mean": self.mean, "variance": self.variance}


@dataclass(frozen=True, eq=False)
class SnMixture:
    """Finite mixture for the law of S_n.

    ``log_weights`` are the Ewens log-probabilities of the retained
    partitions. They are not renormalized after pruning; the pruned mass
    is ``discarded_mass`` and bounds the pointwise CDF error.
    """

    n: int
    alpha: float
    log_weights: np.ndarray
    components: tuple
    partitions: tuple[PartitionMultiplicity, ...]
    base_kind: str
    discarded_mass: float = 0.0

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def cdf(self, s):
        s = np.asarray(s, float)
        out = sum(w * c.cdf(s) for w, c in zip(self.weights, self.components))
        return np.clip(out, 0.0, 1.0)

    def pdf(self, s):
        s = np.asarray(s, float)
        return sum(w * c.pdf(s) for w, c in zip(self.weights, self.components))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha,
            "base_kind": self.base_kind,
            "discarded_mass": self.discarded_mass,
            "components": [
                {"weight": float(w), "log_weight": float(lw), "partition": list(p.v), **c.to_dict()}
                for w, lw, p, c in zip(self.weights, self.log_weights, self.partitions, self.components)
            ],
        }


def _table(n, alpha, epsilon, top_k, cap):
    table = ewens_weight_table(n, alpha, epsilon=epsilon, top_k=top_k, cap=cap)
    parts = tuple(p for p, _ in table.entries)
    logw = np.array([math.log(w) for _, w in table.entries])
    return parts, logw, table.discarded_mass


def sn_mixture_gaussian(n: int, alpha: float, mu: float, sigma2: float, epsilon: float = 0.0,
                        top_k: int | None = None, cap: int | None = None) -> SnMixture:
    """Mixture of N(n mu, sigma2 * sum_j j^2 v_j) over partitions v of n."""
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    parts, logw, dropped = _table(n, alpha, epsilon, top_k, cap)
    comps = tuple(GaussianComponent(n * mu, sigma2 * p.sum_sq_sizes) for p in parts)
    return SnMixture(n, alpha, logw, comps, parts, "gaussian", dropped)


def sn_mixture_phasetype(n: int, alpha: float, base: PhaseType, epsilon: float = 0.0,
                         top_k: int | None = None, cap: int | None = None) -> SnMixture:
    """Mixture of block phase-type laws, one per partition of n."""
    parts, logw, dropped = _table(n, alpha, epsilon, top_k, cap)
    comps = tuple(ph_partition_block(base, p) for p in parts)
    return SnMixture(n, alpha, logw, comps, parts, "phase_type", dropped)


def sn_mixture(n: int, alpha: float, base: BaseDistribution, **kw) -> SnMixture:
    if isinstance(base, Gaussian):
        return sn_mixture_gaussian(n, alpha, base.mu, base.sigma2, **kw)
    ph = base.as_phase_type()
    if ph is not None:
        return sn_mixture_phasetype(n, alpha, ph, **kw)
    raise CapabilityError(f"no closed-form partition mixture for a {base.kind} base")


def sn_cdf(mix: SnMixture, s):
    return mix.cdf(s)


# --- grouped evaluation for large n ----------------------------------------------

# the variance law for n <= cap holds about cap^3 / 3 floats and costs about cap^4 / 12 steps
VARIANCE_LAW_CAP = 400


@lru_cache(maxsize=16)
def gaussian_variance_law(n_max: int, alpha: float) -> tuple[np.ndarray, ...]:
    """Law of Q_n = sum_j j^2 v_j under Ewens(n, alpha), for n = 0..n_max.

    Entry ``n`` is an array whose index ``q`` holds P(Q_n = q).
    """
    if n_max > VARIANCE_LAW_CAP:
        raise ResourceError(f"Gaussian variance law for n up to {n_max} exceeds cap {VARIANCE_LAW_CAP}; "
                            "lower truncation max_n")
    laws = [np.array([1.0])]
    for n in range(1, n_max + 1):
        w = first_block_size_probs(n, alpha)
        out = np.zeros(n * n + 1)
        for j in range(1, n + 1):
            prev = laws[n - j]
            out[j * j:j * j + prev.size] += w[j - 1] * prev
        laws.append(out)
    for law in laws:
        law.setflags(write=False)
    return tuple(laws)


def gaussian_sn_cdf(n: int, alpha: float, mu: float, sigma2: float, s, n_max: int | None = None):
    """P(S_n <= s) for a Gaussian base without enumerating partitions."""
    law = gaussian_variance_law(max(n, n_max or 0), float(alpha))[n]
    q = np.nonzero(law)[0]
    s = np.asarray(s, float)
    z = (s[..., None] - n * mu) / np.sqrt(2 * sigma2 * q)
    return np.clip((0.5 * erfc(-z)) @ law[q], 0.0, 1.0)


def gaussian_sn_pdf(n: int, alpha: float, mu: float, sigma2: float, s, n_max: int | None = None):
    law = gaussian_variance_law(max(n, n_max or 0), float(alpha))[n]
    q = np.nonzero(law)[0]
    s = np.asarray(s, float)
    var = sigma2 * q
    dens = np.exp(-0.5 * (s[..., None] - n * mu) ** 2 / var) / np.sqrt(2 * math.pi * var)
    return dens @ law[q]


@dataclass(frozen=True, eq=False)
class PhSumChain:
    """Phase-type representation of S_1..S_{n_max} for a phase-type base.

    States are (m, j, phase): ``m`` draws remain to be summed and the current
    block has size ``j``, so it runs the base chain slowed by ``j``. When it
    ends, the next block size is drawn from the first-block law of ``m - j``.
    S_n is absorption time from the initial vector for ``m = n``.
    """

    Q: sparse.csr_matrix
    initial: np.ndarray  # row n-1 is the initial distribution of S_n
    exit: np.ndarray
    phases: int

    def phase_type(self, n: int) -> PhaseType:
        """S_n alone; only layers m <= n are reachable from its start."""
        last = _layer_offset(n + 1, self.phases)
        return PhaseType(self.initial[n - 1, :last], self.Q[:last, :last].toarray())

    def _propagate(self, x, start) -> np.ndarray:
        """Rows ``initial @ exp(Q x) start`` for each x >= 0, stepping through the sorted points."""
        order = np.argsort(x)
        out = np.empty((x.size, self.initial.shape[0]))
        vec, at = start, 0.0
        for i in order:
            if x[i] > at:
                vec = expm_multiply(self.Q * (x[i] - at), vec)
                at = x[i]
            out[i] = self.initial @ vec
        return out

    def sf(self, x) -> np.ndarray:
        """P(S_n > x) for n = 1..n_max, one row per x."""
        x = np.atleast_1d(np.asarray(x, float))
        out = np.ones((x.size, self.initial.shape[0]))
        pos = x > 0
        out[pos] = self._propagate(x[pos], np.ones(self.Q.shape[0]))
        return np.clip(out, 0.0, 1.0)

    def cdf(self, x) -> np.ndarray:
        return 1.0 - self.sf(x)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, float))
        out = np.zeros((x.size, self.initial.shape[0]))
        pos = x >= 0
        out[pos] = self._propagate(x[pos], self.exit)
        return np.clip(out, 0.0, None)


def _layer_offset(m, p):
    return p * (m - 1) * m // 2


@lru_cache(maxsize=8)
def _ph_sum_chain(pi_key, T_key, p, alpha, n_max):
    pi = np.array(pi_key)
    T = np.array(T_key).reshape(p, p)
    t = -T.sum(axis=1)
    dim = _layer_offset(n_max + 1, p)

    def idx(m, j):
        return _layer_offset(m, p) + (j - 1) * p

    rows, cols, vals = [], [], []
    Ti, Tj = np.nonzero(T)
    for m in range(1, n_max + 1):
        for j in range(1, m + 1):
            o = idx(m, j)
            rows.append(o + Ti)
            cols.append(o + Tj)
            vals.append(T[Ti, Tj] / j)
            rest = m - j
            if rest == 0:
                continue
            w = first_block_size_probs(rest, alpha)
            target = (np.outer(w, pi)).reshape(-1)  # over (j', phase')
            tgt_idx = idx(rest, 1) + np.arange(rest * p)
            nz = np.nonzero(t)[0]
            for i in nz:
                rows.append(np.full(tgt_idx.size, o + i))
                cols.append(tgt_idx)
                vals.append(t[i] / j * target)
    Q = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim))
    initial = np.zeros((n_max, dim))
    exit_ = np.zeros(dim)
    for m in range(1, n_max + 1):
        w = first_block_size_probs(m, alpha)
        initial[m - 1, idx(m, 1):idx(m, 1) + m * p] = np.outer(w, pi).reshape(-1)
        # absorption only from a block that exhausts its layer (j == m)
        exit_[idx(m, m):idx(m, m) + p] = t / m
    return PhSumChain(Q, initial, exit_, p)


def ph_sum_chain(base: PhaseType, alpha: float, n_max: int) -> PhSumChain:
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    return _ph_sum_chain(tuple(base.pi.tolist()), tuple(base.T.reshape(-1).tolist()),
                         base.dim, float(alpha), int(n_max))


def sn_phase_type(n: int, alpha: float, base: PhaseType) -> PhaseType:
    """S_n as a single phase-type law of dimension p n (n+1) / 2."""
    return ph_sum_chain(base, alpha, n).phase_type(n)


# --- counting process ---------------------------------------------------------------


@dataclass(frozen=True)
class CountingLaw:
    """P(N_t = n) for n = 0..max_n plus the mass of {N_t > max_n}.

    ``se`` is the Monte Carlo standard error per cell when the law was
    simulated, otherwise None.
    """

    t: float
    pmf: np.ndarray
    tail_mass: float
    method: str
    se: np.ndarray | None = None

    def moment(self, k: int) -> float:
        n = np.arange(self.pmf.size, dtype=float)
        return float(np.dot(self.pmf, n ** k))


def passage_probs(prior: DirichletPrior, t: float, n_max: int) -> np.ndarray:
    """P(S_n < t) for n = 1..n_max, where S_n sums urn interarrivals."""
    base = prior.base
    if isinstance(base, Empirical) and base.values.size == 1:
        tau = base.values[0]
        return (np.arange(1, n_max + 1) * tau < t).astype(float)
    ph = base.as_phase_type()
    if ph is None:
        raise CapabilityError(f"no analytic passage probabilities for a {base.kind} time base")
    return ph_sum_chain(ph, prior.alpha, n_max).cdf(t)[0]


def counting_distribution(prior: DirichletPrior, t: float, max_n: int = 64,
                          mc_paths: int = 100_000, rng: np.random.Generator | None = None) -> CountingLaw:
    """Law of the renewal count N_t through P(N_t >= n) = P(S_n < t).

    Phase-type time bases (exponential, integer-shape Gamma, general PH) and
    single-atom bases are exact; other bases fall back to urn simulation.
    """
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    try:
        F = passage_probs(prior, t, max_n + 1)
    except CapabilityError:
        if not prior.base.positive:
            raise
        rng = rng if rng is not None else np.random.default_rng(0)
        counts = urn_renewal_counts(prior, t, mc_paths, rng)
        freq = np.bincount(np.minimum(counts, max_n + 1), minlength=max_n + 2) / mc_paths
        se = np.sqrt(freq * (1 - freq) / mc_paths)
        return CountingLaw(t, freq[:max_n + 1], float(freq[max_n + 1]), "monte_carlo", se[:max_n + 1])
    F = np.concatenate([[1.0], F])
    pmf = np.clip(F[:-1] - F[1:], 0.0, None)
    return CountingLaw(t, pmf, float(F[-1]), "exact")


def counting_pmf(prior: DirichletPrior, t: float, n: int, **kw) -> float:
    """P(N_t = n) = P(S_n < t) - P(S_{n+1} < t), with P(S_0 < t) = 1."""
    if n < 0:
        raise DomainError("n must be non-negative")
    return float(counting_distribution(prior, t, max_n=max(n, 1), **kw).pmf[n])


# --- moments and moment generating function ----------------------------------------


def compound_moments(count_moments, alpha: float, mu1: float, mu2: float, mu3: float):
    """First three raw moments of a sum of N exchangeable DP draws.

    ``count_moments`` holds E N, E N^2, E N^3; N is independent of the draws.
    Ordered pairs of distinct indices number N(N-1) and each contributes
    E X_1 X_2 = (alpha mu1^2 + mu2)/(alpha+1); pairs (i, i, j) number
    3 N(N-1) with E X_1^2 X_2 = (alpha mu1 mu2 + mu3)/(alpha+1).
    """
    n1, n2, n3 = count_moments
    a = alpha
    first = n1 * mu1
    second = (n2 - n1) * (a * mu1 ** 2 + mu2) / (a + 1) + n1 * mu2
    third = ((2 * n1 - 3 * n2 + n3) * (a * a * mu1 ** 3 + 3 * a * mu2 * mu1 + 2 * mu3) / ((a + 1) * (a + 2))
             + 3 * (n2 - n1) * (a * mu1 * mu2 + mu3) / (a + 1)
             + n1 * mu3)
    return first, second, third


def moments_sn(n: int, alpha: float, mu1: float, mu2: float, mu3: float):
    """(E S_n, E S_n^2, E S_n^3) from the first three base moments."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return compound_moments((n, n ** 2, n ** 3), alpha, mu1, mu2, mu3)


def _log_base_mgf(base_mgf, t, n):
    out = np.empty(n)
    for j in range(1, n + 1):
        try:
            m = base_mgf(t * j)
        except (OverflowError, ValueError, ZeroDivisionError):
            m = math.inf
        if not (m > 0 and math.isfinite(m)):
            raise DomainError(f"base MGF diverges at t*j = {t * j} (j = {j})")
        out[j - 1] = math.log(m)
    return out


def mgf_sn(n: int, alpha: float, base_mgf, t: float, cap: int | None = None) -> float:
    """E exp(t S_n) as the partition sum of base MGFs at t*j, in log space."""
    logm = _log_base_mgf(base_mgf, t, n)
    j = np.arange(1, n + 1)
    per_block = math.log(alpha) + logm - np.log(j)
    terms = []
    for v in enumerate_partitions(n, cap):
        vv = np.asarray(v.v)
        nz = vv > 0
        terms.append(float(np.dot(vv[nz], per_block[nz]))
                     - math.fsum(math.lgamma(c + 1) for c in vv[nz]))
    return math.exp(math.lgamma(n + 1) - log_rising_factorial(alpha, n) + logsumexp(terms))


def mgf_sn_recursive(n: int, alpha: float, base_mgf, t: float) -> float:
    """E exp(t S_n) by peeling the first block; O(n^2), no partition cap."""
    logm = _log_base_mgf(base_mgf, t, n)
    logb = [0.0]
    for m in range(1, n + 1):
        w = np.log(first_block_size_probs(m, alpha))
        logb.append(float(logsumexp([w[j - 1] + logm[j - 1] + logb[m - j] for j in range(1, m + 1)])))
    return math.exp(logb[n])

