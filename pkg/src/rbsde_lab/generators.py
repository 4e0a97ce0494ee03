"""Coefficients f(t, y, z), scenarios, and the transforms applied to them.

A generator is evaluated as ``gen(t, y, z, x)`` with numpy broadcasting. The
lattice state ``x`` lets a coefficient depend on the node, which is how
random processes such as ``g_t`` are represented on a recombining lattice.
Structural constants (``mu``, ``phi``, ...) are declared by the author and
checked by sampling with :func:`probe_monotonicity` and :func:`probe_growth`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import DomainError, InvalidParameter, ScenarioError
from .lattice import AdaptedField, BinomialLattice

A2 = "A2-quadratic"
A6 = "A6-linear"
A7 = "A7-superlinear"
CLASSES = (A2, A6, A7)

PROBE_TOL = 1e-9


def _zero(r):
    return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class Generator:
    func: Callable  # (t, x, y, z) -> values
    mu: float = 0.0
    phi: Callable = _zero
    quad_coeff: float | None = None
    lin_coeff: float | None = None
    g_bound: float | Callable = 0.0  # the process g_t, constant or (t, x) -> values
    lipschitz_z: float | None = None
    assumption_class: str = A2
    y_free: bool = False  # f does not depend on y; the implicit step is then explicit
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    origin: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.assumption_class not in CLASSES:
            raise InvalidParameter(f"unknown assumption class {self.assumption_class!r}")

    def __call__(self, t, y, z, x=0.0):
        return self.func(t, x, y, z)

    def g(self, t, x=0.0) -> np.ndarray:
        if callable(self.g_bound):
            return np.asarray(self.g_bound(t, x), dtype=float)
        return np.broadcast_to(float(self.g_bound), np.shape(x)).astype(float)

    @property
    def beta(self) -> float:
        return 0.0 if self.lin_coeff is None else float(self.lin_coeff)

    @property
    def A(self) -> float:
        return 0.0 if self.quad_coeff is None else float(self.quad_coeff)

    def growth_bound(self, t, y, z, x=0.0) -> np.ndarray:
        """Right-hand side of the declared growth condition."""
        ay, az = np.abs(y), np.abs(z)
        if self.assumption_class == A6:
            return np.abs(self.g(t, x)) + self.phi(ay) + self.beta * az
        return self.phi(ay) + self.A * az**2


# ---------------------------------------------------------------- catalog


def f0(assumption_class: str = A2) -> Generator:
    """f = 0."""
    return Generator(
        func=lambda t, x, y, z: np.zeros(np.broadcast(t, x, y, z).shape),
        quad_coeff=0.0,
        lin_coeff=0.0,
        lipschitz_z=0.0,
        assumption_class=assumption_class,
        y_free=True,
        name="f0",
    )


def fmono(c0: float = 0.0, beta: float = 1.0) -> Generator:
    """f = c0 - y^3 + beta|z|: decreasing in y, beta-Lipschitz in z."""
    if beta < 0:
        raise InvalidParameter("beta must be nonnegative")
    return Generator(
        func=lambda t, x, y, z: c0 - np.asarray(y, dtype=float) ** 3 + beta * np.abs(z),
        mu=0.0,
        phi=lambda r: np.asarray(r, dtype=float) ** 3,
        lin_coeff=beta,
        g_bound=c0,
        lipschitz_z=beta,
        assumption_class=A6,
        name="fmono",
        params={"c0": c0, "beta": beta},
    )


def fquad(A: float = 1.0, c0: float = 0.0) -> Generator:
    """f = c0 + A z^2."""
    if A < 0:
        raise InvalidParameter("A must be nonnegative")
    return Generator(
        func=lambda t, x, y, z: c0 + A * np.asarray(z, dtype=float) ** 2 + 0.0 * np.asarray(y, dtype=float),
        mu=0.0,
        phi=lambda r: np.full(np.shape(r), abs(c0)),
        quad_coeff=A,
        assumption_class=A2,
        y_free=True,
        name="fquad",
        params={"A": A, "c0": c0},
    )


def fdrift(mu: float, c0: float = 0.0) -> Generator:
    """f = c0 + mu*y."""
    return Generator(
        func=lambda t, x, y, z: c0 + mu * np.asarray(y, dtype=float) + 0.0 * np.asarray(z, dtype=float),
        mu=mu,
        phi=lambda r: abs(mu) * np.asarray(r, dtype=float),
        lin_coeff=0.0,
        g_bound=c0,
        lipschitz_z=0.0,
        assumption_class=A6,
        name="fdrift",
        params={"mu": mu, "c0": c0},
    )


CATALOG: dict[str, Callable[..., Generator]] = {
    "f0": f0,
    "fmono": fmono,
    "fquad": fquad,
    "fdrift": fdrift,
}


def add(g1: Generator, g2: Generator) -> Generator:
    """Pointwise sum, with the structural constants added."""

    def _sum_opt(a, b):
        return None if a is None and b is None else (a or 0.0) + (b or 0.0)

    p1, p2 = g1.phi, g2.phi
    quad = _sum_opt(g1.quad_coeff, g2.quad_coeff)
    if callable(g1.g_bound) or callable(g2.g_bound):
        gb = lambda t, x: g1.g(t, x) + g2.g(t, x)  # noqa: E731
    else:
        gb = float(g1.g_bound) + float(g2.g_bound)
    lip = None if g1.lipschitz_z is None or g2.lipschitz_z is None else g1.lipschitz_z + g2.lipschitz_z
    cls = A2 if (quad or 0.0) > 0 or A2 in (g1.assumption_class, g2.assumption_class) else g1.assumption_class
    return Generator(
        func=lambda t, x, y, z: g1.func(t, x, y, z) + g2.func(t, x, y, z),
        mu=g1.mu + g2.mu,
        phi=lambda r: p1(r) + p2(r),
        quad_coeff=quad,
        lin_coeff=_sum_opt(g1.lin_coeff, g2.lin_coeff),
        g_bound=gb,
        lipschitz_z=lip,
        assumption_class=cls,
        y_free=g1.y_free and g2.y_free,
        name=f"{g1.name}+{g2.name}",
    )


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class Scenario:
    """The data (xi, f, L) of a reflected equation on a lattice."""

    lattice: BinomialLattice
    terminal: Callable[[np.ndarray], np.ndarray]
    barrier: AdaptedField
    generator: Generator
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.barrier) != self.lattice.N + 1:
            raise ScenarioError(f"barrier has {len(self.barrier)} slices, lattice needs {self.lattice.N + 1}")

    def terminal_values(self) -> np.ndarray:
        x = self.lattice.states(self.lattice.N)
        return np.broadcast_to(np.asarray(self.terminal(x), dtype=float), x.shape).copy()

    @property
    def b(self) -> float:
        return self.barrier.max_abs()

    def obstacle(self) -> AdaptedField:
        """The barrier with xi substituted on the terminal slice."""
        return AdaptedField([*self.barrier.slices[:-1], self.terminal_values()])

    def check(self) -> None:
        xi = self.terminal_values()
        if not np.isfinite(xi).all():
            raise ScenarioError("terminal value is not finite")
        if not all(np.isfinite(s[~np.isneginf(s)]).all() for s in self.barrier):
            raise ScenarioError("barrier has NaN or +inf values")
        bad = np.nonzero(self.barrier[self.lattice.N] > xi)[0]
        if bad.size:
            j = int(bad[0])
            raise ScenarioError(f"L_T > xi at terminal node ({self.lattice.N}, {j})")


def constant_barrier(lattice: BinomialLattice, c: float) -> AdaptedField:
    return AdaptedField.constant(lattice, c)


def make_scenario(
    lattice: BinomialLattice,
    terminal: Callable[[np.ndarray], np.ndarray],
    generator: Generator,
    barrier: float | AdaptedField | Callable = -1e9,
    label: str = "",
) -> Scenario:
    """Convenience constructor; ``barrier`` may be a constant, a field, or ``fn(t, x)``."""
    if isinstance(barrier, AdaptedField):
        field_ = barrier
    elif callable(barrier):
        field_ = AdaptedField.from_function(lattice, barrier)
    else:
        field_ = AdaptedField.constant(lattice, float(barrier))
    return Scenario(lattice, terminal, field_, generator, label)


# ---------------------------------------------------------------- transforms


def ramp(y, C: float) -> np.ndarray:
    """Continuous cut-off: 1 on [-C, C], 0 outside [-2C, 2C], linear between."""
    return np.clip(2.0 - np.abs(np.asarray(y, dtype=float)) / C, 0.0, 1.0)


def truncate(gen: Generator, C: float) -> Generator:
    if not C > 0:
        raise InvalidParameter(f"truncation level C must be positive, got {C}")
    base, phi = gen.func, gen.phi

    def func(t, x, y, z):
        w = ramp(y, C)
        return np.where(w > 0, w * base(t, x, y, z), 0.0)

    return replace(
        gen,
        func=func,
        phi=lambda r: phi(np.minimum(np.asarray(r, dtype=float), 2 * C)),
        y_free=False,
        name=f"trunc[{C:g}]({gen.name})",
        origin=None,
    )


def lipschitz_approx(
    gen: Generator,
    n: float,
    q_radius: float | None = None,
    q_step: float | None = None,
    half_points: int = 512,
) -> Generator:
    """Inf-convolution ``inf_q f(t, y, q) + n|z - q|`` over a grid centred at z.

    By default the grid radius adapts to the probe point,
    ``2 (phi(|y|) + |g| + beta|z|) / n + |z|``, with ``half_points`` steps on
    each side of z. Passing ``q_radius`` (and optionally ``q_step``) fixes it.
    """
    beta = gen.beta
    if n < beta or n <= 0:
        raise InvalidParameter(f"n={n} must be positive and >= beta={beta}")
    if q_step is not None and q_radius is None:
        raise InvalidParameter("q_step requires q_radius")
    if q_step is not None and not q_step > 0:
        raise InvalidParameter("q_step must be positive")
    if q_radius is not None and q_radius < 0:
        raise InvalidParameter("q_radius must be nonnegative")
    K = half_points if q_step is None else int(math.ceil(q_radius / q_step))
    k = np.arange(-K, K + 1, dtype=float)
    base = gen.func

    def func(t, x, y, z):
        t, x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, y, z)))
        shape = z.shape
        t, x, y, z = (v.reshape(-1, 1) for v in (t, x, y, z))
        if q_radius is None:
            rad = 2.0 * (gen.phi(np.abs(y)) + np.abs(gen.g(t, x)) + beta * np.abs(z)) / n + np.abs(z)
            step = rad / K
        else:
            step = np.full_like(z, q_step if q_step is not None else q_radius / K)
        out = np.empty(z.shape[0])
        chunk = max(1, 2_000_000 // k.size)
        for s in range(0, z.shape[0], chunk):
            sl = slice(s, s + chunk)
            dq = step[sl] * k
            vals = base(t[sl], x[sl], y[sl], z[sl] + dq) + n * np.abs(dq)
            out[sl] = vals.min(axis=1)
        return out.reshape(shape)

    return replace(gen, func=func, lipschitz_z=float(n), name=f"lip[{n:g}]({gen.name})", origin=None)


def _shift_factors(lam: float, dt: float | None):
    if dt is None:
        return 0.0, lam
    return dt, math.expm1(lam * dt) / dt if lam != 0 else 0.0


def monotone_shift(scenario: Scenario, lam: float, exact_discrete: bool = False) -> Scenario:
    """Exponential change of variables ``(e^{lam t} Y, e^{lam t} Z, e^{lam t} dK)``.

    The default uses ``e^{lam t} f(t, e^{-lam t} y, e^{-lam t} z) - lam y``. With
    ``exact_discrete`` the coefficient is adjusted to the lattice step so that the
    backward scheme commutes exactly with the change of variables:
    ``e^{lam (t+dt)} f(t, e^{-lam t} y, e^{-lam (t+dt)} z) - (e^{lam dt} - 1)/dt * y``,
    which tends to the default form as dt -> 0.
    """
    lat = scenario.lattice
    gen = scenario.generator
    lag, rate = _shift_factors(lam, lat.dt if exact_discrete else None)
    base, phi, T = gen.func, gen.phi, lat.T

    def func(t, x, y, z):
        t = np.asarray(t, dtype=float)
        return np.exp(lam * (t + lag)) * base(t, x, np.exp(-lam * t) * y, np.exp(-lam * (t + lag)) * z) - rate * y

    if not callable(gen.g_bound) and gen.g_bound == 0:
        g_bar = 0.0
    else:
        g_bar = lambda t, x: np.exp(lam * (np.asarray(t) + lag)) * gen.g(t, x)  # noqa: E731
    scale = math.exp(abs(lam) * (T + lag))
    mu_bar = gen.mu - lam if not exact_discrete else math.exp(lam * lag) * gen.mu - rate
    quad = None if gen.quad_coeff is None else gen.quad_coeff * max(1.0, math.exp(-lam * (T + lag)))
    new_gen = replace(
        gen,
        func=func,
        mu=mu_bar,
        phi=lambda r: scale * phi(r) + abs(rate) * np.asarray(r, dtype=float),
        quad_coeff=quad,
        g_bound=g_bar,
        y_free=gen.y_free and rate == 0,
        name=f"shift[{lam:g}]({gen.name})",
        origin=None,
    )
    growth_T = math.exp(lam * T)
    term = scenario.terminal
    barrier = scenario.barrier.map_indexed(lambda i, s: math.exp(lam * lat.time(i)) * s)
    return Scenario(lat, lambda x: growth_T * np.asarray(term(x), dtype=float), barrier, new_gen, scenario.label)


def unshift_fields(lattice: BinomialLattice, lam: float, Y, Z, dK, exact_discrete: bool = False):
    """Map ``(Y, Z, dK)`` of a shifted scenario back to the original variables."""
    lag = lattice.dt if exact_discrete else 0.0
    Yo = Y.map_indexed(lambda i, s: math.exp(-lam * lattice.time(i)) * s)
    Zo = Z.map_indexed(lambda i, s: math.exp(-lam * (lattice.time(i) + lag)) * s)
    dKo = dK.map_indexed(lambda i, s: math.exp(-lam * lattice.time(i)) * s)
    return Yo, Zo, dKo


def exp_quadratic_transform(scenario: Scenario, A: float) -> Scenario:
    """``theta = exp(2 A Y)``: terminal ``exp(2 A xi)``, barrier ``exp(2 A L)`` and
    ``F(t, x, l) = 2 A x [f(t, log x / 2A, l / (2 A x)) - l^2 / (4 A x^2)]``."""
    if not A > 0:
        raise InvalidParameter("A must be positive")
    gen = scenario.generator
    base = gen.func

    def func(t, s, th, lam):
        th = np.asarray(th, dtype=float)
        if np.any(th <= 0):
            raise DomainError("F(t, x, lambda) is only defined for x > 0")
        lam = np.asarray(lam, dtype=float)
        return 2 * A * th * (base(t, s, np.log(th) / (2 * A), lam / (2 * A * th)) - lam**2 / (4 * A * th**2))

    new_gen = Generator(func=func, mu=0.0, assumption_class=A7, name=f"exp2A[{A:g}]({gen.name})")
    term = scenario.terminal
    barrier = scenario.barrier.map(lambda s: np.exp(2 * A * s))
    return Scenario(
        scenario.lattice, lambda x: np.exp(2 * A * np.asarray(term(x), dtype=float)), barrier, new_gen, scenario.label
    )


def exp_quadratic_forward(A: float, Y: AdaptedField, Z: AdaptedField, dK: AdaptedField):
    """``(theta, Lambda, dJ) = (e^{2AY}, 2 A Z theta, 2 A theta dK)``."""
    theta = Y.map(lambda s: np.exp(2 * A * s))
    Lam = Z.map_indexed(lambda i, s: 2 * A * s * theta[i])
    dJ = dK.map_indexed(lambda i, s: 2 * A * theta[i] * s)
    return theta, Lam, dJ


def exp_quadratic_inverse(A: float, theta: AdaptedField, Lam: AdaptedField, dJ: AdaptedField):
    """``(Y, Z, dK) = (log theta / 2A, Lambda / (2 A theta), dJ / (2 A theta))``."""
    if theta.min() <= 0:
        raise DomainError("theta must be strictly positive")
    Y = theta.map(lambda s: np.log(s) / (2 * A))
    Z = Lam.map_indexed(lambda i, s: s / (2 * A * theta[i]))
    dK = dJ.map_indexed(lambda i, s: s / (2 * A * theta[i]))
    return Y, Z, dK


def _clipper(m: float, p: float):
    return lambda v: np.minimum(np.maximum(v, -p), m)


def clip(scenario: Scenario, m: float, p: float) -> Scenario:
    """Terminal ``(xi v -p) ^ m``; coefficient ``f(t,u,z) - f(t,0,z) + clip(f(t,0,z))``.

    Clipping an already clipped scenario composes on the original coefficient,
    so repeating the same ``(m, p)`` returns an identical scenario.
    """
    if not (m > 0 and p > 0):
        raise InvalidParameter("m and p must be positive")
    cl = _clipper(m, p)
    gen = scenario.generator
    if gen.origin is not None and gen.origin[0] == "clip":
        _, base_gen, prev = gen.origin
        chain = lambda v: cl(prev(v))  # noqa: E731
    else:
        base_gen, chain = gen, cl
    base = base_gen.func

    def func(t, x, y, z):
        at0 = base(t, x, 0.0 * np.asarray(y, dtype=float), z)
        return base(t, x, y, z) - at0 + chain(at0)

    new_gen = replace(
        gen, func=func, name=f"clip[{m:g},{p:g}]({base_gen.name})", origin=("clip", base_gen, chain)
    )
    term = scenario.terminal
    if getattr(term, "_clip_chain", None) is not None:
        tbase, tprev = term._clip_chain
        tchain = lambda v: cl(tprev(v))  # noqa: E731
    else:
        tbase, tchain = term, cl

    def new_term(x):
        return tchain(np.asarray(tbase(x), dtype=float))

    new_term._clip_chain = (tbase, tchain)
    return Scenario(scenario.lattice, new_term, scenario.barrier, new_gen, scenario.label)


def barrier_shift(scenario: Scenario, b: float | None = None) -> Scenario:
    """``(xi - b, f(t, y + b, z), L - b)``; with the default ``b = sup|L|`` the new
    barrier lies in ``[-2b, 0]``. Add ``b`` to Y to map back."""
    if b is None:
        b = scenario.b
    gen = scenario.generator
    base, phi = gen.func, gen.phi
    ab = abs(b)

    def func(t, x, y, z):
        return base(t, x, np.asarray(y, dtype=float) + b, z)

    if gen.assumption_class == A6:
        # keep phi(0) = 0 by moving phi(|b|) into the g process
        phi0 = float(np.asarray(phi(ab)))
        new_phi = lambda r: phi(np.asarray(r, dtype=float) + ab) - phi0  # noqa: E731
        g_new = lambda t, x: np.abs(gen.g(t, x)) + phi0  # noqa: E731
    else:
        new_phi = lambda r: phi(np.asarray(r, dtype=float) + ab)  # noqa: E731
        g_new = gen.g_bound
    new_gen = replace(gen, func=func, phi=new_phi, g_bound=g_new, name=f"bshift[{b:g}]({gen.name})", origin=None)
    term = scenario.terminal
    return Scenario(
        scenario.lattice,
        lambda x: np.asarray(term(x), dtype=float) - b,
        scenario.barrier.map(lambda s: s - b),
        new_gen,
        scenario.label,
    )


# ---------------------------------------------------------------- probes


@dataclass(frozen=True)
class ProbeBox:
    T: float = 1.0
    x: float = 3.0
    y: float = 3.0
    z: float = 3.0


@dataclass(frozen=True)
class ProbeResult:
    name: str
    passed: bool
    worst: float  # largest excess over the claimed bound (<= 0 when passing)
    detail: str = ""


def probe_points(box: ProbeBox, n: int = 1000, seed: int = 0, dims: int = 5) -> np.ndarray:
    """Scrambled Halton points in ``[0,T] x [-x,x] x [-y,y] x [-y,y] x [-z,z]``."""
    u = qmc.Halton(d=dims, scramble=True, seed=seed).random(n)
    lo = np.array([0.0, -box.x, -box.y, -box.y, -box.z])[:dims]
    hi = np.array([box.T, box.x, box.y, box.y, box.z])[:dims]
    return qmc.scale(u, lo, hi)


def probe_monotonicity(gen: Generator, box: ProbeBox = ProbeBox(), n: int = 1000, seed: int = 0) -> ProbeResult:
    """``(y - y')(f(y) - f(y')) <= mu (y - y')^2`` on quasi-random probes."""
    t, x, y, y2, z = probe_points(box, n, seed).T
    lhs = (y - y2) * (gen(t, y, z, x) - gen(t, y2, z, x))
    excess = lhs - gen.mu * (y - y2) ** 2
    k = int(np.argmax(excess))
    worst = float(excess[k])
    return ProbeResult(
        "monotonicity",
        worst <= PROBE_TOL,
        worst,
        f"mu={gen.mu:g}; worst at t={t[k]:.3g}, y={y[k]:.3g}, y'={y2[k]:.3g}, z={z[k]:.3g}",
    )


def probe_growth(gen: Generator, box: ProbeBox = ProbeBox(), n: int = 1000, seed: int = 1) -> ProbeResult:
    t, x, y, _, z = probe_points(box, n, seed).T
    val = gen(t, y, z, x)
    if gen.assumption_class == A7:
        excess = val - gen.growth_bound(t, y, z, x)
    else:
        excess = np.abs(val) - gen.growth_bound(t, y, z, x)
    k = int(np.argmax(excess))
    worst = float(excess[k])
    passed = worst <= PROBE_TOL
    detail = f"class={gen.assumption_class}; worst at t={t[k]:.3g}, y={y[k]:.3g}, z={z[k]:.3g}"
    if gen.assumption_class == A6:
        phi0 = float(np.asarray(gen.phi(0.0)))
        if phi0 != 0.0:
            passed = False
            worst = max(worst, abs(phi0))
            detail += f"; phi(0)={phi0:g} but this class needs phi(0)=0"
    return ProbeResult("growth", passed, worst, detail)


def probe_order(g1: Generator, g2: Generator, box: ProbeBox = ProbeBox(), n: int = 1000, seed: int = 2) -> ProbeResult:
    """``f1 <= f2`` on quasi-random probes."""
    t, x, y, _, z = probe_points(box, n, seed).T
    excess = g1(t, y, z, x) - g2(t, y, z, x)
    k = int(np.argmax(excess))
    worst = float(excess[k])
    return ProbeResult("generator-order", worst <= PROBE_TOL, worst, f"worst at t={t[k]:.3g}, y={y[k]:.3g}, z={z[k]:.3g}")


def validate_scenario(scenario: Scenario, box: ProbeBox | None = None) -> list[ProbeResult]:
    """Run every assumption probe for the scenario's declared class."""
    lat = scenario.lattice
    if box is None:
        xi = scenario.terminal_values()
        ymax = max(1.0, float(np.abs(xi).max()), scenario.b if math.isfinite(scenario.b) else 1.0)
        box = ProbeBox(T=lat.T, x=max(1.0, lat.N * lat.sqrt_dt), y=min(2 * ymax, 1e3), z=3.0)
    gen = scenario.generator
    out = [probe_monotonicity(gen, box), probe_growth(gen, box)]
    xi = scenario.terminal_values()
    LT = scenario.barrier[lat.N]
    excess = float(np.max(LT - xi))
    out.append(ProbeResult("terminal-dominates-barrier", excess <= 0.0, excess, "L_T <= xi at every terminal node"))
    b = scenario.b
    out.append(ProbeResult("barrier-bounded", math.isfinite(b), 0.0 if math.isfinite(b) else math.inf, f"b={b:g}"))
    return out
