"""Recombining symmetric binomial model of a scalar Brownian motion.

Node ``(i, j)`` with ``0 <= j <= i`` sits at time ``t_i = i*T/N`` and carries the
state ``x(i, j) = (2j - i) * sqrt(dt)``. From ``(i, j)`` the walk moves up to
``(i+1, j+1)`` or down to ``(i+1, j)`` with probability 1/2 each, so one-step
conditional expectations and the martingale representation are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InvalidParameter, LatticeMismatch, SliceMismatch

# above this many steps the weights C(i,j)/2^i are built in log space
_LOG_WEIGHTS_FROM = 1000


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self) -> None:
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise InvalidParameter(f"N must be a positive integer, got {self.N!r}")
        if not (math.isfinite(self.T) and self.T > 0):
            raise InvalidParameter(f"T must be positive, got {self.T!r}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    def time(self, i: int) -> float:
        # i*T/N rather than accumulated dt so that t_N == T exactly
        return i * self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.T / self.N


@dataclass(frozen=True)
class BinomialLattice:
    grid: TimeGrid

    @property
    def T(self) -> float:
        return self.grid.T

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.grid.dt)

    def time(self, i: int) -> float:
        return self.grid.time(i)

    def states(self, i: int) -> np.ndarray:
        """Brownian states ``x(i, 0..i)``, lowest first."""
        self._check_slice(i)
        return (2.0 * np.arange(i + 1) - i) * self.sqrt_dt

    def weights(self, i: int) -> np.ndarray:
        """Probabilities ``C(i, j) / 2^i`` of reaching each node of slice ``i``."""
        self._check_slice(i)
        j = np.arange(i + 1)
        if self.N > _LOG_WEIGHTS_FROM:
            logw = gammaln(i + 1) - gammaln(j + 1) - gammaln(i - j + 1) - i * math.log(2.0)
            return np.exp(logw)
        return np.array([math.comb(i, k) for k in j], dtype=float) / 2.0**i

    def node_count(self) -> int:
        return (self.N + 1) * (self.N + 2) // 2

    def _check_slice(self, i: int) -> None:
        if not 0 <= i <= self.N:
            raise SliceMismatch(f"slice {i} outside 0..{self.N}")


def build_lattice(T: float, N: int) -> BinomialLattice:
    return BinomialLattice(TimeGrid(float(T), N))


class AdaptedField:
    """One real value per lattice node, stored slice by slice.

    ``field[i]`` is the array of values on slice ``i`` (length ``i + 1``).
    A field may stop before the terminal slice; Z lives on slices ``0..N-1``.
    """

    __slots__ = ("slices",)

    def __init__(self, slices: Iterable[Sequence[float] | np.ndarray]):
        arrs = []
        for i, s in enumerate(slices):
            a = np.array(s, dtype=float).reshape(-1)
            if a.shape != (i + 1,):
                raise SliceMismatch(f"slice {i} has {a.size} values, expected {i + 1}")
            arrs.append(a)
        if not arrs:
            raise SliceMismatch("an adapted field needs at least one slice")
        self.slices: list[np.ndarray] = arrs

    @classmethod
    def from_function(
        cls,
        lattice: BinomialLattice,
        fn: Callable[[float, np.ndarray], np.ndarray | float],
        n_slices: int | None = None,
    ) -> AdaptedField:
        """Evaluate ``fn(t, x)`` on every node (vectorised over x)."""
        n = lattice.N + 1 if n_slices is None else n_slices
        out = []
        for i in range(n):
            x = lattice.states(i)
            out.append(np.broadcast_to(np.asarray(fn(lattice.time(i), x), dtype=float), x.shape))
        return cls(out)

    @classmethod
    def constant(cls, lattice: BinomialLattice, c: float, n_slices: int | None = None) -> AdaptedField:
        n = lattice.N + 1 if n_slices is None else n_slices
        return cls(np.full(i + 1, float(c)) for i in range(n))

    def __len__(self) -> int:
        return len(self.slices)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.slices[i]

    def __iter__(self):
        return iter(self.slices)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> AdaptedField:
        return AdaptedField(fn(s) for s in self.slices)

    def map_indexed(self, fn: Callable[[int, np.ndarray], np.ndarray]) -> AdaptedField:
        return AdaptedField(fn(i, s) for i, s in enumerate(self.slices))

    def combine(self, other: AdaptedField, fn) -> AdaptedField:
        if len(other) != len(self):
            raise SliceMismatch(f"fields have {len(self)} and {len(other)} slices")
        return AdaptedField(fn(a, b) for a, b in zip(self.slices, other.slices))

    def copy(self) -> AdaptedField:
        return AdaptedField(s.copy() for s in self.slices)

    def max(self) -> float:
        return max(float(s.max()) for s in self.slices)

    def min(self) -> float:
        return min(float(s.min()) for s in self.slices)

    def max_abs(self) -> float:
        return max(float(np.abs(s).max()) for s in self.slices)

    def is_finite(self) -> bool:
        return all(np.isfinite(s).all() for s in self.slices)

    def argmax(self) -> tuple[int, int]:
        best, node = -np.inf, (0, 0)
        for i, s in enumerate(self.slices):
            j = int(np.argmax(s))
            if s[j] > best:
                best, node = s[j], (i, j)
        return node

    def flat(self) -> np.ndarray:
        return np.concatenate(self.slices)

    def __repr__(self) -> str:
        return f"AdaptedField(n_slices={len(self)})"


def _next_slice(field_next: np.ndarray) -> np.ndarray:
    v = np.asarray(field_next, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise SliceMismatch(f"need a slice i+1 with at least 2 values, got shape {v.shape}")
    return v


def conditional_expectation(lattice: BinomialLattice, field_next: np.ndarray) -> np.ndarray:
    """``E[X | node (i, j)]`` for a slice-``i+1`` array ``X``."""
    v = _next_slice(field_next)
    if v.size > lattice.N + 1:
        raise SliceMismatch(f"slice of size {v.size} does not fit a lattice with N={lattice.N}")
    return 0.5 * (v[1:] + v[:-1])


def martingale_coefficient(lattice: BinomialLattice, field_next: np.ndarray) -> np.ndarray:
    """Integrand ``Z_i`` with ``X = E_i[X] + Z_i * dB`` on both branches."""
    v = _next_slice(field_next)
    if v.size > lattice.N + 1:
        raise SliceMismatch(f"slice of size {v.size} does not fit a lattice with N={lattice.N}")
    return (v[1:] - v[:-1]) / (2.0 * lattice.sqrt_dt)


def expectation_at_root(lattice: BinomialLattice, field_slice: np.ndarray) -> float:
    v = np.asarray(field_slice, dtype=float)
    i = v.size - 1
    return float(np.dot(lattice.weights(i), v))


def backward_expectation(lattice: BinomialLattice, terminal: np.ndarray) -> AdaptedField:
    """Martingale ``E[X | F_i]`` on every slice for a slice-N array ``X``."""
    slices = [np.asarray(terminal, dtype=float)]
    if slices[0].size != lattice.N + 1:
        raise SliceMismatch(f"terminal slice must have {lattice.N + 1} values")
    for _ in range(lattice.N):
        slices.append(conditional_expectation(lattice, slices[-1]))
    return AdaptedField(reversed(slices))


def same_lattice(a: BinomialLattice, b: BinomialLattice) -> None:
    if a.N != b.N or a.T != b.T:
        raise LatticeMismatch(f"lattices differ: (T={a.T}, N={a.N}) vs (T={b.T}, N={b.N})")


@dataclass(frozen=True)
class SamplePath:
    steps: np.ndarray  # +1 up / -1 down, length N
    j: np.ndarray  # node index per slice, length N+1
    states: np.ndarray  # x(i, j_i)
    times: np.ndarray


def sample_paths(lattice: BinomialLattice, n_paths: int, seed: int = 0) -> np.ndarray:
    """Node indices ``j`` of ``n_paths`` random paths, shape ``(n_paths, N+1)``."""
    rng = np.random.default_rng(seed)
    ups = rng.integers(0, 2, size=(n_paths, lattice.N), dtype=np.int64)
    j = np.zeros((n_paths, lattice.N + 1), dtype=np.int64)
    np.cumsum(ups, axis=1, out=j[:, 1:])
    return j


def sample_path(lattice: BinomialLattice, seed: int = 0) -> SamplePath:
    j = sample_paths(lattice, 1, seed)[0]
    steps = 2 * np.diff(j) - 1
    i = np.arange(lattice.N + 1)
    states = (2.0 * j - i) * lattice.sqrt_dt
    return SamplePath(steps=steps, j=j, states=states, times=lattice.grid.times)


def path_from_steps(lattice: BinomialLattice, steps: Sequence[int]) -> SamplePath:
    s = np.asarray(steps, dtype=np.int64)
    if s.shape != (lattice.N,) or not np.isin(s, (-1, 1)).all():
        raise InvalidParameter("steps must be N values in {-1, +1}")
    j = np.concatenate([[0], np.cumsum((s + 1) // 2)])
    i = np.arange(lattice.N + 1)
    return SamplePath(steps=s, j=j, states=(2.0 * j - i) * lattice.sqrt_dt, times=lattice.grid.times)
