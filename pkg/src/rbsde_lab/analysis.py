"""Executable checks: comparison, a-priori bounds, norm estimates, approximation sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameter, WrongClass
from .generators import (
    A2,
    A6,
    PROBE_TOL,
    Generator,
    ProbeBox,
    Scenario,
    add,
    barrier_shift,
    clip,
    fdrift,
    fmono,
    fquad,
    lipschitz_approx,
    monotone_shift,
    probe_order,
    truncate,
    unshift_fields,
)
from .lattice import AdaptedField, BinomialLattice, backward_expectation, build_lattice, conditional_expectation, same_lattice
from .solver import DiscreteSolution, SchemeOptions, solve_rbsde

log = logging.getLogger(__name__)

EQUAL_BARRIER = "equal-barrier"
ORDERED_BARRIER = "ordered-barrier"


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class ComparisonReport:
    regime: str
    y_ordered: bool
    k_ordered: bool | None  # None when the regime makes no claim
    dk_ordered: bool | None
    worst_violation: dict[str, float]
    worst_node: dict[str, tuple[int, int]]

    @property
    def passed(self) -> bool:
        return self.y_ordered and self.k_ordered is not False and self.dk_ordered is not False


def _worst(field_: AdaptedField) -> tuple[float, tuple[int, int]]:
    node = field_.argmax()
    return max(0.0, float(field_[node[0]][node[1]])), node


def _min_path_sum(lattice: BinomialLattice, d: AdaptedField) -> AdaptedField:
    """Smallest cumulative sum of ``d`` over paths reaching each node (before adding the node itself)."""
    out = [np.zeros(1)]
    for i in range(lattice.N):
        s = out[-1] + d[i]
        nxt = np.full(i + 2, np.inf)
        nxt[:-1] = np.minimum(nxt[:-1], s)  # down move keeps j
        nxt[1:] = np.minimum(nxt[1:], s)  # up move j -> j+1
        out.append(nxt)
    return AdaptedField(out)


def check_comparison(
    sol1: DiscreteSolution,
    sol2: DiscreteSolution,
    hypotheses: Iterable[str] = ("terminal", "generator"),
    tol: float = 1e-10,
) -> ComparisonReport:
    """Nodewise check of ``Y1 <= Y2``; with a common barrier also ``K1 >= K2`` along
    every path and ``dK1 >= dK2``. If the barriers are only ordered
    (``"barrier" in hypotheses``) only the Y clause is asserted."""
    same_lattice(sol1.lattice, sol2.lattice)
    regime = ORDERED_BARRIER if "barrier" in set(hypotheses) else EQUAL_BARRIER
    dy = sol1.Y.combine(sol2.Y, lambda a, b: a - b)
    wy, ny = _worst(dy)
    viol, nodes = {"Y": wy}, {"Y": ny}
    k_ok = dk_ok = None
    d = sol1.dK.combine(sol2.dK, lambda a, b: a - b)
    wd, nd = _worst(d.map(lambda s: -s))
    mins = _min_path_sum(sol1.lattice, d)
    wk, nk = _worst(mins.map(lambda s: -s))
    viol.update(dK=wd, K=wk)
    nodes.update(dK=nd, K=nk)
    if regime == EQUAL_BARRIER:
        dk_ok, k_ok = wd <= tol, wk <= tol
    return ComparisonReport(regime, wy <= tol, k_ok, dk_ok, viol, nodes)


@dataclass(frozen=True)
class HypothesisCheck:
    """Measured excesses ``max(a1 - a2)`` for each input, and whether the pair is equal."""

    terminal: float
    barrier: float
    generator: float
    terminal_equal: bool
    barrier_equal: bool
    generator_equal: bool

    def violations(self, hypotheses: Iterable[str]) -> list[str]:
        """Inputs flagged in ``hypotheses`` must be ordered; the others must coincide."""
        h = set(hypotheses)
        out = []
        for name, excess, equal, tol in (
            ("terminal", self.terminal, self.terminal_equal, 0.0),
            ("generator", self.generator, self.generator_equal, PROBE_TOL),
            ("barrier", self.barrier, self.barrier_equal, 0.0),
        ):
            if name in h and excess > tol:
                out.append(f"{name}: first exceeds second by {excess:.3g}")
            elif name not in h and not equal:
                out.append(f"{name}: inputs differ but {name} is not flagged as ordered")
        return out

    def holds(self, hypotheses: Iterable[str]) -> bool:
        return not self.violations(hypotheses)


def check_hypotheses(s1: Scenario, s2: Scenario, box: ProbeBox | None = None) -> HypothesisCheck:
    """Validate ``xi1 <= xi2`` and ``L1 <= L2`` nodewise and ``f1 <= f2`` by sampling."""
    same_lattice(s1.lattice, s2.lattice)
    lat = s1.lattice
    if box is None:
        y = max(1.0, float(np.abs(s1.terminal_values()).max()), float(np.abs(s2.terminal_values()).max()))
        box = ProbeBox(T=lat.T, x=max(1.0, lat.N * lat.sqrt_dt), y=2 * y, z=3.0)
    x1, x2 = s1.terminal_values(), s2.terminal_values()
    dl = s1.barrier.combine(s2.barrier, lambda a, b: a - b)
    g12 = probe_order(s1.generator, s2.generator, box).worst
    g21 = probe_order(s2.generator, s1.generator, box).worst
    return HypothesisCheck(
        terminal=float(np.max(x1 - x2)),
        barrier=dl.max(),
        generator=g12,
        terminal_equal=bool(np.array_equal(x1, x2)),
        barrier_equal=all(np.array_equal(a, b) for a, b in zip(s1.barrier, s2.barrier)),
        generator_equal=max(g12, g21) <= PROBE_TOL,
    )


# ---------------------------------------------------------------- a-priori bound


@dataclass(frozen=True)
class AprioriBound:
    bound: float
    satisfied: bool
    max_abs_y: float


def apriori_bound(
    scenario: Scenario,
    solution: DiscreteSolution | None = None,
    opts: SchemeOptions = SchemeOptions(),
    tol: float = 1e-10,
) -> AprioriBound:
    """``(e^{(phi(0) + mu) T} v 1)(||xi||_inf + 1)`` against the solver's ``max |Y|``."""
    gen = scenario.generator
    if gen.assumption_class != A2:
        raise WrongClass(f"a-priori bound needs class {A2}, got {gen.assumption_class}")
    if scenario.barrier.max() > 0:
        raise InvalidParameter("barrier must be nonpositive; apply barrier_shift first")
    phi0 = float(np.asarray(gen.phi(0.0)))
    xi_inf = float(np.abs(scenario.terminal_values()).max())
    bound = max(math.exp((phi0 + gen.mu) * scenario.lattice.T), 1.0) * (xi_inf + 1.0)
    if solution is None:
        solution = solve_rbsde(scenario, opts)
    m = solution.Y.max_abs()
    return AprioriBound(bound, m <= bound + tol, m)


# ---------------------------------------------------------------- norm estimates


@dataclass(frozen=True)
class NormEstimates:
    E_sup_Y2: float
    E_int_Z2: float
    E_KT2: float
    sup_method: str  # "exact" or "sampled"
    sup_stderr: float = 0.0


def _expected_int_sq(lattice: BinomialLattice, fld: AdaptedField, n_slices: int) -> float:
    return sum(lattice.dt * float(np.dot(lattice.weights(i), fld[i] ** 2)) for i in range(n_slices))


def expected_KT2(solution: DiscreteSolution) -> float:
    """``E[K_T^2]`` by forward recursion of the first two moments of the path sum."""
    lat = solution.lattice
    w, m1, m2 = np.ones(1), np.zeros(1), np.zeros(1)
    for i in range(lat.N):
        dk = solution.dK[i]
        a1 = m1 + w * dk
        a2 = m2 + 2 * m1 * dk + w * dk**2
        nw, n1, n2 = (np.zeros(i + 2) for _ in range(3))
        for tgt, src in ((nw, w), (n1, a1), (n2, a2)):
            tgt[:-1] += 0.5 * src
            tgt[1:] += 0.5 * src
        w, m1, m2 = nw, n1, n2
    return float(m2.sum())


def _sup_y2_paths(solution: DiscreteSolution, j: np.ndarray) -> np.ndarray:
    vals = np.stack([solution.Y[i][j[:, i]] for i in range(solution.lattice.N + 1)], axis=1)
    return (vals**2).max(axis=1)


def norm_estimates(
    solution: DiscreteSolution,
    exact_max_N: int = 20,
    n_samples: int = 100_000,
    seed: int = 0,
) -> NormEstimates:
    """``E[sup_t Y^2]``, ``E[sum Z^2 dt]`` and ``E[K_T^2]`` on the lattice.

    The supremum term enumerates every path when ``N <= exact_max_N`` and is
    estimated from ``n_samples`` seeded paths otherwise.
    """
    lat = solution.lattice
    n = lat.N
    z2 = _expected_int_sq(lat, solution.Z, n)
    k2 = expected_KT2(solution)
    if n <= exact_max_N:
        total, chunk = 0.0, 1 << 15
        shifts = np.arange(n, dtype=np.int64)
        for start in range(0, 1 << n, chunk):
            p = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
            ups = (p[:, None] >> shifts[None, :]) & 1
            j = np.zeros((p.size, n + 1), dtype=np.int64)
            np.cumsum(ups, axis=1, out=j[:, 1:])
            total += float(_sup_y2_paths(solution, j).sum())
        return NormEstimates(total / (1 << n), z2, k2, "exact")
    from .lattice import sample_paths

    s = _sup_y2_paths(solution, sample_paths(lat, n_samples, seed))
    return NormEstimates(float(s.mean()), z2, k2, "sampled", float(s.std(ddof=1) / math.sqrt(n_samples)))


@dataclass(frozen=True)
class EstimateRatio:
    lhs: float
    rhs: float
    ratio: float


def norm_estimate_ratio(scenario: Scenario, solution: DiscreteSolution, **kw) -> EstimateRatio:
    """Measured ``E[sup Y^2 + int Z^2 + K_T^2]`` over ``E[xi^2 + int g^2 + phi^2(b) + phi^2(2T) + 1]``.

    The constant in front of the right side is not explicit, so only the ratio is reported.
    """
    lat = scenario.lattice
    ne = norm_estimates(solution, **kw)
    gen = scenario.generator
    xi = scenario.terminal_values()
    e_xi2 = float(np.dot(lat.weights(lat.N), xi**2))
    gfield = AdaptedField.from_function(lat, lambda t, x: gen.g(t, x), n_slices=lat.N)
    e_g2 = _expected_int_sq(lat, gfield, lat.N)
    phi = lambda r: float(np.asarray(gen.phi(r)))  # noqa: E731
    rhs = e_xi2 + e_g2 + phi(scenario.b) ** 2 + phi(2 * lat.T) ** 2 + 1.0
    lhs = ne.E_sup_Y2 + ne.E_int_Z2 + ne.E_KT2
    return EstimateRatio(lhs, rhs, lhs / rhs)


# ---------------------------------------------------------------- pointwise bound


def pointwise_bound_field(scenario: Scenario, c_beta: float = 1.0) -> AdaptedField:
    """The envelope ``M`` with ``|Y^n| <= M`` for every Lipschitz approximation.

    ``M^2 = 2 e^{2aT} E_i[xi^2 + int_t^T g^2] + e^{aT}(phi(e^{aT} b) + phi(2T))
    + c_beta e^{2aT} b^2 + a(e^{aT} b + 2T) + 1`` with ``a = 1 + 2 beta^2``.
    """
    gen = scenario.generator
    if gen.assumption_class != A6:
        raise WrongClass(f"pointwise bound needs class {A6}, got {gen.assumption_class}")
    lat = scenario.lattice
    T, b = lat.T, scenario.b
    alpha = 1.0 + 2.0 * gen.beta**2
    eaT = math.exp(alpha * T)
    phi = lambda r: float(np.asarray(gen.phi(r)))  # noqa: E731
    const = eaT * (phi(eaT * b) + phi(2 * T)) + c_beta * eaT**2 * b**2 + alpha * (eaT * b + 2 * T) + 1.0
    xi2 = backward_expectation(lat, scenario.terminal_values() ** 2)
    # G_i = E_i[sum_{k >= i} g_k^2 dt]
    G = [np.zeros(lat.N + 1)]
    for i in range(lat.N - 1, -1, -1):
        g = gen.g(lat.time(i), lat.states(i))
        G.append(lat.dt * g**2 + conditional_expectation(lat, G[-1]))
    G = G[::-1]
    return AdaptedField(np.sqrt(2.0 * eaT**2 * (xi2[i] + G[i]) + const) for i in range(lat.N + 1))


def supermartingale_defect(lattice: BinomialLattice, M: AdaptedField) -> float:
    """Largest ``E_i[M_{i+1}] - M_i`` (<= 0 when M is a supermartingale)."""
    return max(float(np.max(conditional_expectation(lattice, M[i + 1]) - M[i])) for i in range(lattice.N))


# ---------------------------------------------------------------- sweeps


SWEEP_KINDS = ("lipschitz-n", "truncation-C", "clip-mp")


@dataclass
class SweepResult:
    kind: str
    values: list
    y0: list[float]
    diffs: list[float]
    monotone: bool  # Y0 nondecreasing (within tol)
    stabilized: bool  # last two Y0 differ by less than tol
    solutions: list[DiscreteSolution] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.monotone if self.kind == "lipschitz-n" else self.stabilized


def _sorted_ascending(values: Sequence) -> bool:
    return all(a <= b for a, b in zip(values, values[1:]))


def approximation_sweep(
    scenario: Scenario,
    kind: str,
    values: Sequence,
    opts: SchemeOptions = SchemeOptions(),
    tol: float = 1e-10,
    keep_solutions: bool = False,
    **lip_kwargs,
) -> SweepResult:
    if kind not in SWEEP_KINDS:
        raise InvalidParameter(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
    values = list(values)
    if len(values) < 2:
        raise InvalidParameter("a sweep needs at least two values")
    gen = scenario.generator
    if kind == "clip-mp":
        values = [tuple(v) for v in values]
        if not (_sorted_ascending([v[0] for v in values]) and _sorted_ascending([v[1] for v in values])):
            raise InvalidParameter("(m, p) values must be sorted ascending in both components")
    elif not _sorted_ascending(values):
        raise InvalidParameter("values must be sorted ascending")
    if kind == "lipschitz-n" and min(values) < gen.beta:
        raise InvalidParameter(f"all n must be >= beta={gen.beta}")
    y0, sols = [], []
    for v in values:
        if kind == "lipschitz-n":
            sc = Scenario(scenario.lattice, scenario.terminal, scenario.barrier, lipschitz_approx(gen, v, **lip_kwargs))
        elif kind == "truncation-C":
            sc = Scenario(scenario.lattice, scenario.terminal, scenario.barrier, truncate(gen, v))
        else:
            sc = clip(scenario, *v)
        sol = solve_rbsde(sc, opts)
        y0.append(sol.y0)
        if keep_solutions:
            sols.append(sol)
    diffs = [b - a for a, b in zip(y0, y0[1:])]
    return SweepResult(
        kind,
        values,
        y0,
        diffs,
        monotone=all(d >= -tol for d in diffs),
        stabilized=abs(diffs[-1]) < tol,
        solutions=sols,
    )


# ---------------------------------------------------------------- invariance


def max_field_diff(a: AdaptedField, b: AdaptedField) -> float:
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))


def shift_invariance(scenario: Scenario, lam: float, opts: SchemeOptions = SchemeOptions()) -> dict[str, float]:
    """Solve directly and through the exponential change of variables; report the gaps."""
    direct = solve_rbsde(scenario, opts)
    shifted = solve_rbsde(monotone_shift(scenario, lam, exact_discrete=True), opts)
    Y, Z, dK = unshift_fields(scenario.lattice, lam, shifted.Y, shifted.Z, shifted.dK, exact_discrete=True)
    return {"Y": max_field_diff(Y, direct.Y), "Z": max_field_diff(Z, direct.Z), "dK": max_field_diff(dK, direct.dK)}


def barrier_shift_invariance(scenario: Scenario, b: float | None = None, opts: SchemeOptions = SchemeOptions()) -> float:
    if b is None:
        b = scenario.b
    direct = solve_rbsde(scenario, opts)
    shifted = solve_rbsde(barrier_shift(scenario, b), opts)
    return max_field_diff(shifted.Y.map(lambda s: s + b), direct.Y)


# ---------------------------------------------------------------- randomized suites


REGIMES = ("comp1", "com-zq", "com-zl1")


@dataclass(frozen=True)
class ComparisonCase:
    seed: tuple[int, int]
    regime: str
    s1: Scenario
    s2: Scenario
    hypotheses: tuple[str, ...]


def _random_terminal(rng: np.random.Generator):
    kind = rng.integers(0, 3)
    a, c = rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)
    if kind == 0:
        lo, hi = sorted(rng.uniform(-1.5, 1.5, size=2))
        return lambda x: np.clip(a * x + c, lo, hi)
    if kind == 1:
        amp, s = rng.uniform(0.2, 1.0), rng.uniform(0.3, 1.0)
        return lambda x: amp * np.tanh(s * a * x / max(abs(a), 1e-9)) + c
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


def _random_bump(rng: np.random.Generator):
    """A nonnegative bounded increment."""
    kind = rng.integers(0, 3)
    d = rng.uniform(0, 0.5)
    if kind == 0:
        return lambda x: np.full_like(np.asarray(x, dtype=float), d)
    if kind == 1:
        return lambda x: np.minimum(np.maximum(x, 0.0), 1.0) * d * 2
    return lambda x: np.zeros_like(np.asarray(x, dtype=float))


def _random_barrier(rng: np.random.Generator, lattice: BinomialLattice, xi_floor) -> AdaptedField:
    """Constant or clamped affine barrier, forced below ``xi_floor`` at maturity."""
    if rng.random() < 0.4:
        c = rng.uniform(-1.0, 0.8)
        fn = lambda t, x: np.full_like(x, c)  # noqa: E731
    else:
        a, c, s = rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.5, 0.5)
        fn = lambda t, x: np.clip(a * x + c + s * t, -1.5, 1.5)  # noqa: E731
    L = AdaptedField.from_function(lattice, fn)
    N = lattice.N
    floor = xi_floor(lattice.states(N))
    return AdaptedField([*L.slices[:-1], np.minimum(L[N], floor)])


def random_comparison_case(regime: str, seed: int, index: int) -> ComparisonCase:
    """A hypothesis-respecting scenario pair for one of the comparison regimes."""
    if regime not in REGIMES:
        raise InvalidParameter(f"unknown regime {regime!r}")
    rng = np.random.default_rng([seed, index])
    T = float(rng.uniform(0.5, 1.0))
    N = int(rng.integers(8, 25))
    lat = build_lattice(T, N)
    xi1 = _random_terminal(rng)
    bump = _random_bump(rng)
    xi2 = lambda x: xi1(x) + bump(x)  # noqa: E731
    if regime in ("comp1", "com-zq"):
        A1 = float(rng.uniform(0.0, 1.0))
        A2_ = A1 + float(rng.uniform(0.0, 1.0 - A1))
        c1 = float(rng.uniform(-0.5, 0.5))
        c2 = c1 + float(rng.uniform(0.0, 0.5))
        g1, g2 = fquad(A1, c1), fquad(A2_, c2)
        if regime == "com-zq":
            mu = float(rng.uniform(-1.0, 1.0))
            g1, g2 = add(g1, fdrift(mu)), add(g2, fdrift(mu))
        L = _random_barrier(rng, lat, xi1)
        return ComparisonCase(
            (seed, index), regime, Scenario(lat, xi1, L, g1), Scenario(lat, xi2, L, g2), ("terminal", "generator")
        )
    beta1 = float(rng.uniform(0.0, 1.5))
    beta2 = beta1 + float(rng.uniform(0.0, 1.5 - beta1))
    c1 = float(rng.uniform(-0.5, 0.5))
    c2 = c1 + float(rng.uniform(0.0, 0.5))
    g1, g2 = fmono(c1, beta1), fmono(c2, beta2)
    L1 = _random_barrier(rng, lat, xi1)
    raise_by = float(rng.uniform(0.0, 0.5))
    L2 = L1.map_indexed(lambda i, s: s + raise_by)
    xi2_floor = lambda x: np.maximum(xi2(x), xi1(x))  # noqa: E731
    L2 = AdaptedField([*L2.slices[:-1], np.minimum(L2[N], xi2_floor(lat.states(N)))])
    L2 = L1.combine(L2, np.maximum)
    return ComparisonCase(
        (seed, index), regime, Scenario(lat, xi1, L1, g1), Scenario(lat, xi2, L2, g2), ("terminal", "generator", "barrier")
    )


def random_comparison_suite(
    regime: str, n_pairs: int = 100, seed: int = 0, opts: SchemeOptions = SchemeOptions(), tol: float = 1e-10
) -> list[tuple[ComparisonCase, ComparisonReport]]:
    out = []
    for k in range(n_pairs):
        case = random_comparison_case(regime, seed, k)
        r = check_comparison(solve_rbsde(case.s1, opts), solve_rbsde(case.s2, opts), case.hypotheses, tol)
        log.debug("comparison %s seed=%s passed=%s worst=%s", regime, case.seed, r.passed, r.worst_violation)
        out.append((case, r))
    return out
