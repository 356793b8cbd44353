"""Integer partitions in multiplicity form and Ewens sampling weights.

A partition of ``n`` is stored as its multiplicity vector ``v`` where
``v[i-1]`` counts the blocks of size ``i``, so that ``sum(i * v_i) == n``.
All probabilities are handled as natural logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError

PARTITION_CAP = 40


@dataclass(frozen=True)
class PartitionMultiplicity:
    n: int
    v: tuple[int, ...]

    def __post_init__(self):
        if self.n < 1 or len(self.v) != self.n:
            raise DomainError(f"multiplicity vector must have length n={self.n}")
        if any(c < 0 for c in self.v):
            raise DomainError("multiplicities must be non-negative")
        if sum((i + 1) * c for i, c in enumerate(self.v)) != self.n:
            raise DomainError(f"sum of i*v_i must equal n={self.n}, got v={self.v}")

    @property
    def blocks(self) -> int:
        return sum(self.v)

    @property
    def parts(self) -> tuple[int, ...]:
        """Block sizes in descending order."""
        out = []
        for size in range(self.n, 0, -1):
            out.extend([size] * self.v[size - 1])
        return tuple(out)

    @property
    def sum_sq_sizes(self) -> int:
        return sum((i + 1) ** 2 * c for i, c in enumerate(self.v))

    @classmethod
    def from_parts(cls, parts) -> "PartitionMultiplicity":
        parts = [int(p) for p in parts]
        n = sum(parts)
        v = [0] * n
        for p in parts:
            if p < 1:
                raise DomainError("block sizes must be positive")
            v[p - 1] += 1
        return cls(n, tuple(v))

    @classmethod
    def from_labels(cls, labels) -> "PartitionMultiplicity":
        """Multiplicity pattern induced by a sequence of cluster labels."""
        _, counts = np.unique(np.asarray(labels), return_counts=True)
        return cls.from_parts(counts)


@dataclass(frozen=True)
class EwensWeight:
    log_prob: float
    partition: PartitionMultiplicity
    alpha: float

    @property
    def prob(self) -> float:
        return math.exp(self.log_prob)


def _check_n(n, cap):
    cap = PARTITION_CAP if cap is None else cap
    if not isinstance(n, (int, np.integer)) or n < 1 or n > cap:
        raise DomainError(f"n must be an integer in [1, {cap}] (partition cap), got {n!r}")
    return int(n)


def _check_alpha(alpha):
    if not (alpha > 0 and math.isfinite(alpha)):
        raise DomainError(f"precision alpha must be positive and finite, got {alpha!r}")
    return float(alpha)


def _descending_parts(n, largest):
    if n == 0:
        yield ()
        return
    for first in range(min(n, largest), 0, -1):
        for rest in _descending_parts(n - first, first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def _enumerate(n):
    return tuple(PartitionMultiplicity.from_parts(p) for p in _descending_parts(n, n))


def enumerate_partitions(n: int, cap: int | None = None) -> list[PartitionMultiplicity]:
    """All partitions of ``n``, largest part first, in descending lexicographic order.

    >>> [p.parts for p in enumerate_partitions(4)]
    [(4,), (3, 1), (2, 2), (2, 1, 1), (1, 1, 1, 1)]
    """
    return list(_enumerate(_check_n(n, cap)))


def log_rising_factorial(alpha: float, n: int) -> float:
    """log of alpha (alpha+1) ... (alpha+n-1)."""
    return math.fsum(math.log(alpha + i) for i in range(n))


def ewens_log_prob(v: PartitionMultiplicity, alpha: float) -> EwensWeight:
    alpha = _check_alpha(alpha)
    n = v.n
    log_p = math.lgamma(n + 1) - log_rising_factorial(alpha, n)
    for i, c in enumerate(v.v, start=1):
        if c:
            log_p += c * (math.log(alpha) - math.log(i)) - math.lgamma(c + 1)
    return EwensWeight(min(log_p, 0.0), v, alpha)


def ewens_log_probs(n: int, alpha: float, cap: int | None = None) -> np.ndarray:
    """Log Ewens probabilities aligned with ``enumerate_partitions(n)``."""
    return np.array([ewens_log_prob(v, alpha).log_prob for v in enumerate_partitions(n, cap)])


@dataclass(frozen=True)
class WeightTable:
    entries: list[tuple[PartitionMultiplicity, float]]
    discarded_mass: float

    @property
    def total(self) -> float:
        return math.fsum(w for _, w in self.entries) + self.discarded_mass


def ewens_weight_table(n: int, alpha: float, epsilon: float = 0.0, top_k: int | None = None,
                       cap: int | None = None) -> WeightTable:
    """Ewens weights for all partitions of ``n``, optionally pruned.

    Partitions whose weight falls below ``epsilon`` times the largest weight are
    dropped, and if ``top_k`` is given only the ``top_k`` heaviest survive.
    The mass of everything dropped is reported exactly in ``discarded_mass``.
    """
    if not 0.0 <= epsilon < 1.0:
        raise DomainError(f"epsilon must lie in [0, 1), got {epsilon}")
    parts = enumerate_partitions(n, cap)
    logw = ewens_log_probs(n, alpha, cap)
    keep = logw >= logw.max() + math.log(epsilon) if epsilon > 0 else np.ones(len(parts), bool)
    if top_k is not None:
        if top_k < 1:
            raise DomainError("top_k must be at least 1")
        order = np.argsort(-logw, kind="stable")
        keep[order[top_k:]] = False
    weights = np.exp(logw)
    entries = [(p, float(w)) for p, w, k in zip(parts, weights, keep) if k]
    discarded = math.fsum(weights[~keep])
    return WeightTable(entries, discarded)


def log_normalizer(n: int, alpha: float) -> float:
    """log-sum-exp of all Ewens log-weights; zero up to rounding."""
    return float(logsumexp(ewens_log_probs(n, alpha)))


def first_block_size_probs(m: int, alpha: float) -> np.ndarray:
    """Law of the size of the block holding a given item in an Ewens partition of ``m``.

    Entry ``j-1`` is ``alpha (m-1)! (alpha)_{m-j} / ((m-j)! (alpha)_m)``.
    Removing that block leaves an Ewens partition of ``m - j`` items.
    """
    alpha = _check_alpha(alpha)
    j = np.arange(1, m + 1)
    logs = np.log(alpha + np.arange(m))
    cum = np.concatenate([[0.0], np.cumsum(logs)])  # cum[k] = log (alpha)_k
    logw = (math.log(alpha) + math.lgamma(m) - np.array([math.lgamma(m - jj + 1) for jj in j])
            + cum[m - j] - cum[m])
    w = np.exp(logw)
    return w / w.sum()
