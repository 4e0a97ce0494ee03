"""Backward dynamic programming for the reflected equation on the lattice.

At node (i, j), with ``a = E_i[Y_{i+1}]`` and ``Z = (Y_up - Y_down) / (2 sqrt(dt))``:

    y~ = a + dt * f(t_i, y~, Z)        (implicit; explicit mode uses f(t_i, a, Z))
    Y  = max(y~, L)
    dK = Y - y~

so ``Y_i = Y_{i+1} + f(t_i, y~, Z) dt + dK - Z dB`` holds on both branches and
``dK * (Y - L) = 0`` holds exactly. The implicit step has a unique root when
``dt * max(mu, 0) < 1``. Discrete comparison additionally needs the scheme to
be monotone in the successor values, i.e. ``|df/dz| * sqrt(dt) <= 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractionViolated,
    InvalidParameter,
    MaxIterations,
    NonFiniteValue,
    RootNotBracketed,
)
from .generators import Generator, Scenario
from .lattice import AdaptedField, BinomialLattice, conditional_expectation, martingale_coefficient

log = logging.getLogger(__name__)

_MAX_BRACKET_DOUBLINGS = 60

# callables invoked as fn(scenario, solution) after every solve; used for auditing
_observers: list = []


def add_observer(fn) -> None:
    _observers.append(fn)


def remove_observer(fn) -> None:
    _observers.remove(fn)


@dataclass(frozen=True)
class SchemeOptions:
    y_evaluation: str = "implicit"
    root_tol: float = 1e-12
    max_root_iters: int = 200
    contraction_guard: bool = True

    def __post_init__(self) -> None:
        if self.y_evaluation not in ("implicit", "explicit"):
            raise InvalidParameter(f"y_evaluation must be implicit or explicit, got {self.y_evaluation!r}")
        if not self.root_tol > 0:
            raise InvalidParameter("root_tol must be positive")
        if self.max_root_iters < 1:
            raise InvalidParameter("max_root_iters must be >= 1")


@dataclass(frozen=True)
class ResidualReport:
    barrier_violation: float  # max (L - Y)^+
    skorokhod: float  # max |dK (Y - L)|
    identity_up: float
    identity_down: float
    dk_negativity: float  # max (-dK)^+
    worst_identity_node: tuple[int, int] = (0, 0)

    @property
    def identity(self) -> float:
        return max(self.identity_up, self.identity_down)

    def ok(self, identity_tol: float = 1e-10, skorokhod_tol: float = 1e-12) -> bool:
        return (
            self.barrier_violation == 0.0
            and self.skorokhod <= skorokhod_tol
            and self.identity <= identity_tol
            and self.dk_negativity == 0.0
        )

    def as_dict(self) -> dict:
        return {
            "barrier_violation": self.barrier_violation,
            "skorokhod": self.skorokhod,
            "identity_up": self.identity_up,
            "identity_down": self.identity_down,
            "dk_negativity": self.dk_negativity,
            "worst_identity_node": list(self.worst_identity_node),
        }


@dataclass
class DiscreteSolution:
    """``Y`` on slices 0..N, ``Z`` on 0..N-1, ``dK`` on 0..N (last slice zero).

    ``dK[i]`` is ``K_{i+1} - K_i`` along any path through node ``(i, j)``, so
    ``K_0 = 0`` and the cumulative K along a path is a sum of visited ``dK``.
    ``Y_eval`` holds the points at which f was evaluated.
    """

    lattice: BinomialLattice
    Y: AdaptedField
    Z: AdaptedField
    dK: AdaptedField
    Y_eval: AdaptedField
    residual_report: ResidualReport | None = None
    meta: dict = field(default_factory=dict)

    @property
    def y0(self) -> float:
        return float(self.Y[0][0])

    def K_along(self, j_path: np.ndarray) -> np.ndarray:
        """Cumulative K at each time along a path given by node indices ``j``."""
        inc = np.array([self.dK[i][j_path[i]] for i in range(self.lattice.N)])
        return np.concatenate([[0.0], np.cumsum(inc)])


def _node(i: int, mask: np.ndarray) -> tuple[int, int]:
    return (i, int(np.nonzero(mask)[0][0]))


def implicit_y_step(
    a,
    t: float,
    z,
    gen: Generator,
    dt: float,
    opts: SchemeOptions = SchemeOptions(),
    x=0.0,
    slice_index: int | None = None,
) -> np.ndarray:
    """Solve ``y = a + dt f(t, y, z)`` by bracketed bisection (vectorised)."""
    a, z, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, z, x)))
    i = -1 if slice_index is None else slice_index
    if opts.contraction_guard and dt * max(gen.mu, 0.0) >= 1.0:
        raise ContractionViolated(f"dt*mu = {dt * gen.mu:g} >= 1")
    if gen.y_free:
        y = a + dt * gen.func(t, x, a, z)
        return np.asarray(y, dtype=float)

    def h(y):
        v = y - a - dt * np.asarray(gen.func(t, x, y, z), dtype=float)
        bad = ~np.isfinite(v)
        if bad.any():
            raise NonFiniteValue(f"generator returned a non-finite value at t={t:g}", _node(i, bad))
        return v

    width = dt * (
        np.asarray(gen.phi(np.abs(a) + 1.0), dtype=float)
        + gen.A * z**2
        + np.abs(gen.g(t, x))
        + gen.beta * np.abs(z)
        + 1.0
    )
    width = np.broadcast_to(width, a.shape).copy()
    lo, hi = a - width, a + width
    hlo, hhi = h(lo), h(hi)
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        bad = (hlo > 0) | (hhi < 0)
        if not bad.any():
            break
        width = np.where(bad, 2.0 * width, width)
        lo, hi = a - width, a + width
        hlo, hhi = np.where(bad, h(lo), hlo), np.where(bad, h(hi), hhi)
    else:
        bad = (hlo > 0) | (hhi < 0)
        if bad.any():
            raise RootNotBracketed("no sign change after bracket expansion; check generator metadata", _node(i, bad))

    best = np.where(np.abs(hlo) <= np.abs(hhi), lo, hi)
    best_res = np.minimum(np.abs(hlo), np.abs(hhi))
    done = best_res <= opts.root_tol / 16
    for _ in range(opts.max_root_iters):
        if done.all():
            break
        mid = 0.5 * (lo + hi)
        hm = h(mid)
        better = ~done & (np.abs(hm) < best_res)
        best = np.where(better, mid, best)
        best_res = np.where(better, np.abs(hm), best_res)
        go_down = ~done & (hm > 0)
        go_up = ~done & (hm <= 0)
        hi = np.where(go_down, mid, hi)
        lo = np.where(go_up, mid, lo)
        # stop at |h| well inside tolerance or when the bracket is two adjacent floats
        done = done | (best_res <= opts.root_tol / 16) | (np.nextafter(lo, hi) >= hi)
    bad = (best_res > opts.root_tol) & ~(np.nextafter(lo, hi) >= hi)
    if bad.any():
        raise MaxIterations(
            f"bisection residual {best_res.max():.3g} above root_tol after {opts.max_root_iters} steps", _node(i, bad)
        )
    y = best
    return y


def solve_rbsde(scenario: Scenario, opts: SchemeOptions = SchemeOptions(), check: bool = True) -> DiscreteSolution:
    lat = scenario.lattice
    gen = scenario.generator
    dt = lat.dt
    if check:
        scenario.check()
    if opts.contraction_guard and dt * max(gen.mu, 0.0) >= 1.0:
        raise ContractionViolated(f"contraction guard: dt*mu = {dt * gen.mu:g} >= 1 (dt={dt:g}, mu={gen.mu:g})")
    N = lat.N
    Y = [None] * (N + 1)
    Z = [None] * N
    dK = [None] * (N + 1)
    Yev = [None] * (N + 1)
    Y[N] = scenario.terminal_values()
    Yev[N] = Y[N].copy()
    dK[N] = np.zeros(N + 1)
    for i in range(N - 1, -1, -1):
        t = lat.time(i)
        x = lat.states(i)
        a = conditional_expectation(lat, Y[i + 1])
        z = martingale_coefficient(lat, Y[i + 1])
        if opts.y_evaluation == "implicit":
            ytil = implicit_y_step(a, t, z, gen, dt, opts, x=x, slice_index=i)
            yev = ytil
        else:
            ytil = a + dt * np.asarray(gen.func(t, x, a, z), dtype=float)
            yev = a
        if not np.isfinite(ytil).all():
            raise NonFiniteValue("non-finite continuation value", _node(i, ~np.isfinite(ytil)))
        L = scenario.barrier[i]
        y = np.maximum(ytil, L)
        Y[i], Z[i], dK[i], Yev[i] = y, z, y - ytil, yev
    sol = DiscreteSolution(
        lat,
        AdaptedField(Y),
        AdaptedField(Z),
        AdaptedField(dK),
        AdaptedField(Yev),
        meta={"mode": opts.y_evaluation, "generator": gen.name},
    )
    sol.residual_report = residuals(sol, scenario)
    log.debug("solved %s: Y0=%.12g residuals=%s", gen.name, sol.y0, sol.residual_report)
    for fn in _observers:
        fn(scenario, sol)
    return sol


def residuals(solution: DiscreteSolution, scenario: Scenario) -> ResidualReport:
    """Worst violation of each clause of the discrete reflected equation."""
    lat = solution.lattice
    gen = scenario.generator
    dt, sq = lat.dt, lat.sqrt_dt
    bv = sk = iu = idn = neg = 0.0
    worst_node = (0, 0)
    for i in range(lat.N + 1):
        y, L, dk = solution.Y[i], scenario.barrier[i], solution.dK[i]
        gap = y - L
        bv = max(bv, float(np.max(np.maximum(-gap, 0.0))))
        finite = np.isfinite(gap)
        if finite.any():
            sk = max(sk, float(np.max(np.abs(dk[finite] * gap[finite]))))
        neg = max(neg, float(np.max(np.maximum(-dk, 0.0))))
        if i == lat.N:
            term = scenario.terminal_values()
            e = float(np.max(np.abs(y - term)))
            if e > max(iu, idn):
                worst_node = (i, int(np.argmax(np.abs(y - term))))
            iu, idn = max(iu, e), max(idn, e)
            continue
        z = solution.Z[i]
        drive = np.asarray(gen.func(lat.time(i), lat.states(i), solution.Y_eval[i], z), dtype=float) * dt
        nxt = solution.Y[i + 1]
        ru = np.abs(nxt[1:] + drive + dk - z * sq - y)
        rd = np.abs(nxt[:-1] + drive + dk + z * sq - y)
        m = max(float(ru.max()), float(rd.max()))
        if m > max(iu, idn):
            worst_node = (i, int(np.argmax(np.maximum(ru, rd))))
        iu, idn = max(iu, float(ru.max())), max(idn, float(rd.max()))
    return ResidualReport(bv, sk, iu, idn, neg, worst_node)
