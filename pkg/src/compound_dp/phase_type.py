"""Phase-type distributions and the matrix exponential they rely on.

A phase-type law PH(pi, T) is the absorption time of a Markov jump process
with transient generator ``T`` started from the row vector ``pi``. Its
density is ``pi exp(T u) t`` with exit vector ``t = -T 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ResourceError
from .partitions import PartitionMultiplicity

DIM_CAP = 512

# Pade(13) numerator coefficients and the 1-norm threshold under which the
# [13/13] approximant is accurate to unit roundoff (Higham, 2005).
_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])
_THETA13 = 5.371920351148152


def matrix_exponential(M, cap: int = DIM_CAP) -> np.ndarray:
    """exp(M) by scaling and squaring with a [13/13] Pade approximant.

    Accepts a single square matrix or a stack of shape ``(..., p, p)``;
    every matrix in a stack gets its own scaling exponent.
    """
    A = np.asarray(M, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DomainError(f"matrix_exponential needs square matrices, got shape {A.shape}")
    p = A.shape[-1]
    if p > cap:
        raise ResourceError(f"matrix dimension {p} exceeds cap {cap}")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix_exponential needs finite entries")
    batch = A.shape[:-2]
    A = A.reshape((-1, p, p))

    norms = np.abs(A).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.where(norms > _THETA13, np.ceil(np.log2(norms / _THETA13)), 0).astype(int)
    A = A / (2.0 ** s)[:, None, None]

    b = _PADE13
    eye = np.broadcast_to(np.eye(p), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye
    E = np.linalg.solve(V - U, V + U)

    for step in range(int(s.max(initial=0))):
        active = s > step
        E[active] = E[active] @ E[active]
    return E.reshape(batch + (p, p))


@dataclass(frozen=True, eq=False)
class PhaseType:
    pi: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(-1)
        T = np.array(self.T, dtype=float)
        if T.ndim == 0:
            T = T.reshape(1, 1)
        if T.shape != (pi.size, pi.size):
            raise DomainError(f"T must be {pi.size}x{pi.size}, got {T.shape}")
        if pi.size > DIM_CAP:
            raise ResourceError(f"phase-type dimension {pi.size} exceeds cap {DIM_CAP}")
        _check_subgenerator(pi, T)
        pi.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "T", T)

    @property
    def dim(self) -> int:
        return self.pi.size

    @property
    def exit(self) -> np.ndarray:
        return -self.T.sum(axis=1)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape)
        pos = u >= 0
        if pos.any():
            E = _expm_at(self.T, u[pos])
            out[pos] = np.einsum("i,kij,j->k", self.pi, E, self.exit)
        return np.clip(out, 0.0, None) if out.ndim else float(max(out, 0.0))

    def sf(self, u):
        u = np.asarray(u, dtype=float)
        out = np.ones(u.shape)
        pos = u > 0
        if pos.any():
            E = _expm_at(self.T, u[pos])
            out[pos] = np.einsum("i,kij->k", self.pi, E).clip(0.0, 1.0)
        return out if out.ndim else float(out)

    def cdf(self, u):
        return 1.0 - self.sf(u)

    def moment(self, k: int) -> float:
        """k! pi (-T)^{-k} 1."""
        x = np.ones(self.dim)
        for _ in range(k):
            x = np.linalg.solve(-self.T, x)
        return math.factorial(k) * float(self.pi @ x)

    @property
    def mean(self) -> float:
        return self.moment(1)

    def mgf(self, s: float) -> float:
        """pi (-sI - T)^{-1} t; infinite when s reaches the decay rate."""
        decay = -np.max(np.linalg.eigvals(self.T).real)
        if s >= decay:
            return math.inf
        return float(self.pi @ np.linalg.solve(s * -np.eye(self.dim) - self.T, self.exit))

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        p = self.dim
        rates = -np.diag(self.T)
        jump = np.where(np.eye(p, dtype=bool), 0.0, self.T) / rates[:, None]
        jump = np.concatenate([jump, (self.exit / rates)[:, None]], axis=1)
        cum = np.cumsum(jump, axis=1)
        cum[:, -1] = 1.0
        state = _categorical(np.broadcast_to(np.cumsum(self.pi), (size, p)), rng)
        out = np.zeros(size)
        live = np.arange(size)
        while live.size:
            st = state[live]
            out[live] += rng.exponential(size=live.size) / rates[st]
            nxt = _categorical(cum[st], rng)
            state[live] = nxt
            live = live[nxt < p]
        return out

    def to_dict(self) -> dict:
        return {"kind": "phase_type", "pi": self.pi.tolist(), "T": self.T.tolist()}

    @classmethod
    def exponential(cls, rate: float) -> "PhaseType":
        return cls([1.0], [[-float(rate)]])

    @classmethod
    def erlang(cls, k: int, rate: float) -> "PhaseType":
        T = -rate * np.eye(k) + rate * np.eye(k, k=1)
        pi = np.zeros(k)
        pi[0] = 1.0
        return cls(pi, T)


@dataclass(frozen=True, eq=False)
class BlockPhaseType(PhaseType):
    """Phase-type law of a partition-structured sum, with its provenance."""

    partition: PartitionMultiplicity | None = None
    scales: tuple[int, ...] = field(default=())


def _check_subgenerator(pi, T, tol=1e-10):
    if np.any(pi < -tol) or abs(pi.sum() - 1.0) > 1e-9:
        raise DomainError("pi must be a probability vector summing to 1")
    if not np.all(np.isfinite(T)):
        raise DomainError("T must be finite")
    diag = np.diag(T)
    off = T[~np.eye(T.shape[0], dtype=bool)]
    if np.any(diag >= 0):
        raise DomainError("T must have a strictly negative diagonal")
    if np.any(off < -tol):
        raise DomainError("T must have non-negative off-diagonal entries")
    exit_ = -T.sum(axis=1)
    scale = np.abs(diag).max()
    if np.any(exit_ < -tol * scale) or not np.any(exit_ > tol * scale):
        raise DomainError("T must have non-positive row sums with some strictly negative")


def _categorical(cum, rng):
    u = rng.random(cum.shape[0])
    return (u[:, None] >= cum).sum(axis=1)


def _expm_at(T, u, chunk=4096):
    u = np.asarray(u, dtype=float).reshape(-1)
    out = np.empty((u.size,) + T.shape)
    for start in range(0, u.size, chunk):
        sl = slice(start, start + chunk)
        out[sl] = matrix_exponential(T[None] * u[sl, None, None])
    return out


def ph_density(ph: PhaseType, u):
    """pi exp(T u) t, zero for negative ``u``."""
    return ph.pdf(u)


def ph_scale(ph: PhaseType, j: int) -> PhaseType:
    """Law of ``j * X`` for ``X ~ ph``."""
    if j < 1:
        raise DomainError(f"scale index must be >= 1, got {j}")
    return PhaseType(ph.pi, ph.T / j)


def ph_convolve(a: PhaseType, b: PhaseType) -> PhaseType:
    """Law of the sum of independent ``a`` and ``b`` draws."""
    p = a.dim + b.dim
    if p > DIM_CAP:
        raise ResourceError(f"convolution dimension {p} exceeds cap {DIM_CAP}")
    T = np.zeros((p, p))
    T[:a.dim, :a.dim] = a.T
    T[:a.dim, a.dim:] = np.outer(a.exit, b.pi)
    T[a.dim:, a.dim:] = b.T
    return PhaseType(np.concatenate([a.pi, np.zeros(b.dim)]), T)


def ph_partition_block(base: PhaseType, v: PartitionMultiplicity, cap: int = DIM_CAP) -> BlockPhaseType:
    """PH law of ``sum_j sum_{k <= v_j} j * X_{jk}`` with i.i.d. ``X ~ base``.

    Blocks for size ``j`` use ``T / j``. Each copy hands over to the next
    through the coupling ``t pi / j`` where ``t`` is the exit vector of ``T``,
    so the hand-off out of a group of size ``j`` carries that group's divisor.
    Sizes with ``v_j = 0`` contribute no rows.
    """
    p = base.dim
    scales = tuple(j for j in range(1, v.n + 1) for _ in range(v.v[j - 1]))
    dim = p * len(scales)
    if dim > cap:
        raise ResourceError(f"block phase-type dimension {dim} exceeds cap {cap}")
    T = np.zeros((dim, dim))
    coupling = np.outer(base.exit, base.pi)
    for k, j in enumerate(scales):
        sl = slice(k * p, (k + 1) * p)
        T[sl, sl] = base.T / j
        if k + 1 < len(scales):
            T[sl, (k + 1) * p:(k + 2) * p] = coupling / j
    pi = np.zeros(dim)
    pi[:p] = base.pi
    return BlockPhaseType(pi, T, partition=v, scales=scales)


def phase_type_from_dict(d: dict) -> PhaseType:
    return PhaseType(d["pi"], d["T"])
