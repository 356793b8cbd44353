"""Base distributions, Dirichlet-process priors, Polya-urn sampling and conjugate updates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import ConfigError, DomainError, ResourceError
from .partitions import PartitionMultiplicity
from .phase_type import PhaseType


class BaseDistribution:
    """Common surface of the base measures G_0 a DP prior can carry."""

    kind = "base"
    #: True when every draw is strictly positive (usable for interarrival times).
    positive = False

    def sample(self, size, rng):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def moment(self, k: int) -> float:
        raise NotImplementedError

    def mgf(self, t: float) -> float:
        raise NotImplementedError

    def as_phase_type(self) -> PhaseType | None:
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Gaussian(BaseDistribution):
    mu: float
    sigma2: float
    kind = "gaussian"

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2) and math.isfinite(self.mu)):
            raise DomainError(f"Gaussian needs finite mu and sigma2 > 0, got {self.mu}, {self.sigma2}")

    def sample(self, size, rng):
        return rng.normal(self.mu, math.sqrt(self.sigma2), size)

    def cdf(self, x):
        return 0.5 * special.erfc(-(np.asarray(x, float) - self.mu) / math.sqrt(2 * self.sigma2))

    def pdf(self, x):
        return stats.norm.pdf(x, self.mu, math.sqrt(self.sigma2))

    def moment(self, k):
        m, s2 = self.mu, self.sigma2
        return {1: m, 2: m * m + s2, 3: m ** 3 + 3 * m * s2}[k]

    def mgf(self, t):
        return math.exp(t * self.mu + 0.5 * t * t * self.sigma2)

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "sigma2": self.sigma2}


@dataclass(frozen=True)
class Exponential(BaseDistribution):
    rate: float
    kind = "exponential"
    positive = True

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise DomainError(f"Exponential rate must be positive, got {self.rate}")

    def sample(self, size, rng):
        return rng.exponential(1.0 / self.rate, size)

    def cdf(self, x):
        return -np.expm1(-self.rate * np.clip(np.asarray(x, float), 0, None))

    def pdf(self, x):
        x = np.asarray(x, float)
        return np.where(x >= 0, self.rate * np.exp(-self.rate * np.clip(x, 0, None)), 0.0)

    def moment(self, k):
        return math.factorial(k) / self.rate ** k

    def mgf(self, t):
        return math.inf if t >= self.rate else self.rate / (self.rate - t)

    def as_phase_type(self):
        return PhaseType.exponential(self.rate)

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class Gamma(BaseDistribution):
    shape: float
    rate: float
    kind = "gamma"
    positive = True

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError(f"Gamma needs shape > 0 and rate > 0, got {self.shape}, {self.rate}")

    def sample(self, size, rng):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def cdf(self, x):
        return special.gammainc(self.shape, self.rate * np.clip(np.asarray(x, float), 0, None))

    def pdf(self, x):
        return stats.gamma.pdf(x, self.shape, scale=1.0 / self.rate)

    def moment(self, k):
        return math.exp(special.gammaln(self.shape + k) - special.gammaln(self.shape)) / self.rate ** k

    def mgf(self, t):
        return math.inf if t >= self.rate else (1 - t / self.rate) ** (-self.shape)

    def as_phase_type(self):
        if float(self.shape).is_integer() and self.shape <= 64:
            return PhaseType.erlang(int(self.shape), self.rate)
        return None

    def to_dict(self):
        return {"kind": self.kind, "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True, eq=False)
class PhaseTypeBase(BaseDistribution):
    ph: PhaseType
    kind = "phase_type"
    positive = True

    def sample(self, size, rng):
        return self.ph.sample(int(np.prod(size)), rng).reshape(size)

    def cdf(self, x):
        return self.ph.cdf(x)

    def pdf(self, x):
        return self.ph.pdf(x)

    def moment(self, k):
        return self.ph.moment(k)

    def mgf(self, t):
        return self.ph.mgf(t)

    def as_phase_type(self):
        return self.ph

    def to_dict(self):
        return self.ph.to_dict()


@dataclass(frozen=True, eq=False)
class Empirical(BaseDistribution):
    """Discrete law on finitely many atoms; equal values are merged."""

    values: np.ndarray
    weights: np.ndarray
    kind = "empirical"

    def __post_init__(self):
        values = np.asarray(self.values, float).reshape(-1)
        weights = np.asarray(self.weights, float).reshape(-1)
        if values.size == 0 or values.shape != weights.shape:
            raise DomainError("Empirical needs matching non-empty values and weights")
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-9:
            raise DomainError("Empirical weights must be non-negative and sum to 1")
        uniq, inv = np.unique(values, return_inverse=True)
        merged = np.bincount(inv, weights=weights)
        object.__setattr__(self, "values", uniq)
        object.__setattr__(self, "weights", merged / merged.sum())

    @property
    def positive(self):
        return bool(np.all(self.values > 0))

    def sample(self, size, rng):
        return self.values[rng.choice(self.values.size, size=size, p=self.weights)]

    def cdf(self, x):
        x = np.asarray(x, float)
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        return np.minimum(cum[np.searchsorted(self.values, x, side="right")], 1.0)

    def moment(self, k):
        return float(np.dot(self.weights, self.values ** k))

    def mgf(self, t):
        return float(np.dot(self.weights, np.exp(t * self.values)))

    def to_dict(self):
        return {"kind": self.kind, "atoms": [[float(v), float(w)] for v, w in zip(self.values, self.weights)]}


@dataclass(frozen=True, eq=False)
class Mixture(BaseDistribution):
    """Finite mixture of base distributions; used for DP posterior bases."""

    weights: tuple[float, ...]
    components: tuple[BaseDistribution, ...]
    kind = "mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if len(self.components) == 0 or w.size != len(self.components):
            raise DomainError("Mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise DomainError("Mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def positive(self):
        return all(c.positive for c in self.components)

    def sample(self, size, rng):
        size = (size,) if np.isscalar(size) else tuple(size)
        pick = rng.choice(len(self.components), size=size, p=self.weights)
        out = np.empty(size)
        for i, comp in enumerate(self.components):
            mask = pick == i
            if mask.any():
                out[mask] = comp.sample(int(mask.sum()), rng)
        return out

    def cdf(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def moment(self, k):
        return math.fsum(w * c.moment(k) for w, c in zip(self.weights, self.components))

    def mgf(self, t):
        return math.fsum(w * c.mgf(t) for w, c in zip(self.weights, self.components))

    def to_dict(self):
        return {"kind": self.kind,
                "components": [[w, c.to_dict()] for w, c in zip(self.weights, self.components)]}


@dataclass(frozen=True)
class NormalInverseGamma(BaseDistribution):
    """Joint law of (mean, variance): variance ~ IG(a0, b0), mean | variance ~ N(m0, variance / kappa0).

    Draws are rows ``(mean, variance)``; used as a latent base for Gaussian kernels.
    """

    m0: float
    kappa0: float
    a0: float
    b0: float
    kind = "normal_inverse_gamma"

    def __post_init__(self):
        if not (self.kappa0 > 0 and self.a0 > 0 and self.b0 > 0):
            raise DomainError("NormalInverseGamma needs kappa0, a0, b0 > 0")

    def sample(self, size, rng):
        var = self.b0 / rng.gamma(self.a0, 1.0, size)
        mean = rng.normal(self.m0, np.sqrt(var / self.kappa0))
        return np.stack([mean, var], axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "m0": self.m0, "kappa0": self.kappa0, "a0": self.a0, "b0": self.b0}


def base_from_dict(d: dict) -> BaseDistribution:
    kind = d.get("kind")
    try:
        if kind == "gaussian":
            return Gaussian(float(d["mu"]), float(d["sigma2"]))
        if kind == "exponential":
            return Exponential(float(d["rate"]))
        if kind == "gamma":
            return Gamma(float(d["shape"]), float(d["rate"]))
        if kind == "phase_type":
            return PhaseTypeBase(PhaseType(d["pi"], d["T"]))
        if kind == "empirical":
            atoms = np.asarray(d["atoms"], float).reshape(-1, 2)
            return Empirical(atoms[:, 0], atoms[:, 1])
        if kind == "normal_inverse_gamma":
            return NormalInverseGamma(float(d["m0"]), float(d["kappa0"]), float(d["a0"]), float(d["b0"]))
        if kind == "mixture":
            ws, cs = zip(*d["components"])
            return Mixture(ws, tuple(base_from_dict(c) for c in cs))
    except KeyError as exc:
        raise ConfigError(f"base distribution of kind {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown base distribution kind {kind!r}")


@dataclass(frozen=True)
class DirichletPrior:
    alpha: float
    base: BaseDistribution

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError(f"DP precision must be positive and finite, got {self.alpha}")

    def to_dict(self):
        return {"alpha": self.alpha, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["alpha"]), base_from_dict(d["base"]))


@dataclass(frozen=True)
class UrnSample:
    values: np.ndarray
    labels: np.ndarray
    partition: PartitionMultiplicity


def polya_urn_sample(prior: DirichletPrior, n: int, rng: np.random.Generator) -> UrnSample:
    """Draw ``X_1..X_n`` sequentially from the generalized Polya urn.

    The ``k``-th draw is fresh from the base with probability alpha/(alpha+k-1)
    and otherwise copies a uniformly chosen earlier draw. Cluster labels are
    assigned at draw time, so ties are tracked by provenance, not by value.
    """
    values, labels = polya_urn_batch(prior, n, 1, rng)
    return UrnSample(values[0], labels[0], PartitionMultiplicity.from_labels(labels[0]))


def polya_urn_batch(prior: DirichletPrior, n: int, size: int, rng: np.random.Generator):
    """``size`` independent urn sequences of length ``n``; returns (values, labels)."""
    if n < 1:
        raise DomainError(f"urn length must be >= 1, got {n}")
    alpha = prior.alpha
    values = np.empty((size, n))
    labels = np.empty((size, n), dtype=np.int64)
    n_blocks = np.zeros(size, dtype=np.int64)
    rows = np.arange(size)
    for k in range(n):
        fresh = rng.random(size) < alpha / (alpha + k)
        if k == 0:
            fresh[:] = True
        src = rng.integers(0, max(k, 1), size)
        copy = ~fresh
        values[copy, k] = values[rows[copy], src[copy]]
        labels[copy, k] = labels[rows[copy], src[copy]]
        m = int(fresh.sum())
        if m:
            values[fresh, k] = prior.base.sample(m, rng)
            labels[fresh, k] = n_blocks[fresh]
            n_blocks[fresh] += 1
    return values, labels


def expected_distinct(alpha: float, n: int) -> float:
    """Expected number of distinct values among ``n`` urn draws."""
    if n < 1 or not alpha > 0:
        raise DomainError("expected_distinct needs n >= 1 and alpha > 0")
    return math.fsum(alpha / (alpha + i) for i in range(n))


@dataclass(frozen=True)
class PosteriorDp:
    alpha_post: float
    base_post: Mixture

    @property
    def prior(self) -> DirichletPrior:
        return DirichletPrior(self.alpha_post, self.base_post)

    def predictive_sample(self, size, rng):
        """Draws of X_{n+1} given the observations."""
        return self.base_post.sample(size, rng)


def _flatten(base, weight):
    if isinstance(base, Mixture):
        for w, c in zip(base.weights, base.components):
            yield from _flatten(c, weight * w)
    else:
        yield weight, base


def posterior_update(prior: DirichletPrior, observations) -> PosteriorDp:
    """Conjugate DP update: DP(alpha + n, (alpha G_0 + sum_i delta_{x_i}) / (alpha + n)).

    A prior whose base already carries atoms (a previous posterior) is
    flattened, so that updating in two stages matches a single update.
    """
    obs = np.asarray(observations, float).reshape(-1)
    if obs.size == 0:
        raise DomainError("posterior_update needs at least one observation")
    if not np.all(np.isfinite(obs)):
        raise DomainError("observations must be finite")
    alpha, n = prior.alpha, obs.size
    parts = list(_flatten(prior.base, alpha / (alpha + n)))
    atoms_v = [obs]
    atoms_w = [np.full(n, 1.0 / (alpha + n))]
    cont_w, cont = [], []
    for w, c in parts:
        if isinstance(c, Empirical):
            atoms_v.append(c.values)
            atoms_w.append(w * c.weights)
        else:
            cont_w.append(w)
            cont.append(c)
    aw = np.concatenate(atoms_w)
    atoms = Empirical(np.concatenate(atoms_v), aw / aw.sum())
    base = Mixture(tuple(cont_w) + (float(aw.sum()),), tuple(cont) + (atoms,))
    return PosteriorDp(alpha + n, base)


class _UrnState:
    """Latent-parameter ids of the active urn sequences plus the shared parameter store.

    Fresh base draws are appended to ``store``; a copy step copies an id, so
    ties are tracked by provenance rather than by floating-point equality.
    """

    def __init__(self, size, base, width=16):
        self.ids = np.empty((size, width), dtype=np.int64)
        self.base = base
        self.store = None
        self.used = 0

    def _append(self, draws):
        m = draws.shape[0]
        if self.store is None:
            self.store = np.empty((max(2 * m, 64),) + draws.shape[1:])
        elif self.used + m > self.store.shape[0]:
            grown = np.empty((2 * (self.used + m),) + self.store.shape[1:])
            grown[:self.used] = self.store[:self.used]
            self.store = grown
        self.store[self.used:self.used + m] = draws
        self.used += m
        return np.arange(self.used - m, self.used)

    def step(self, alpha, k, rng):
        a = self.ids.shape[0]
        if k >= self.ids.shape[1]:
            grown = np.empty((a, 2 * self.ids.shape[1]), dtype=np.int64)
            grown[:, :k] = self.ids[:, :k]
            self.ids = grown
        fresh = rng.random(a) < alpha / (alpha + k) if k else np.ones(a, bool)
        m = int(fresh.sum())
        if m:
            self.ids[fresh, k] = self._append(np.asarray(self.base.sample(m, rng)))
        if m < a:
            rows = np.nonzero(~fresh)[0]
            self.ids[rows, k] = self.ids[rows, rng.integers(0, k, rows.size)]
        return self.store[self.ids[:, k]]

    def keep(self, mask, k):
        if not mask.all():
            self.ids = self.ids[mask, :max(k, 1)].copy()


def urn_renewal_counts(prior: DirichletPrior, horizon: float, size: int, rng: np.random.Generator,
                       kernel=None, record: bool = False, max_events: int = 10_000_000):
    """Renewal counts N_t for ``size`` independent urn interarrival sequences.

    Interarrivals are urn draws from ``prior``, or ``kernel(theta, rng)``
    applied to urn draws of a latent parameter. N_t counts arrivals whose
    running total stays strictly below ``horizon``. With ``record=True`` the
    interarrivals of each path, up to and including the first one reaching
    the horizon, are also returned.
    """
    counts = np.zeros(size, dtype=np.int64)
    totals = np.zeros(size)
    active = np.arange(size)
    state = _UrnState(size, prior.base)
    trails = [[] for _ in range(size)] if record else None
    k = 0
    while active.size:
        theta = state.step(prior.alpha, k, rng)
        gaps = theta if kernel is None else kernel(theta, rng)
        if np.any(gaps <= 0) or not np.all(np.isfinite(gaps)):
            raise DomainError("interarrival draws must be positive and finite; check the time base")
        if record:
            for r, g in zip(active, gaps):
                trails[r].append(float(g))
        totals[active] += gaps
        going = totals[active] < horizon
        counts[active[going]] += 1
        k += 1
        if k > max_events:
            raise ResourceError(f"a renewal path exceeded {max_events} events")
        state.keep(going, k)
        active = active[going]
    if record:
        return counts, [np.array(tr) for tr in trails]
    return counts


def urn_sums(prior: DirichletPrior, lengths, rng: np.random.Generator, kernel=None, record: bool = False):
    """Sums of the first ``lengths[r]`` urn draws of independent sequences."""
    lengths = np.asarray(lengths, dtype=np.int64)
    size = lengths.size
    sums = np.zeros(size)
    active = np.nonzero(lengths > 0)[0]
    state = _UrnState(active.size, prior.base)
    trails = [[] for _ in range(size)] if record else None
    k = 0
    while active.size:
        theta = state.step(prior.alpha, k, rng)
        x = theta if kernel is None else kernel(theta, rng)
        if record:
            for r, xi in zip(active, x):
                trails[r].append(float(xi))
        sums[active] += x
        k += 1
        going = lengths[active] > k
        state.keep(going, k)
        active = active[going]
    if record:
        return sums, [np.array(tr) for tr in trails]
    return sums
