import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbsde_lab.errors import (
    ContractionViolated,
    InvalidParameter,
    MaxIterations,
    NonFiniteValue,
    RootNotBracketed,
    ScenarioError,
)
from rbsde_lab.generators import Generator, add, f0, fdrift, fmono, fquad, make_scenario
from rbsde_lab.lattice import AdaptedField, build_lattice, path_from_steps
from rbsde_lab.solver import SchemeOptions, implicit_y_step, residuals, solve_rbsde


def reference_fmono(T, N, xi, L, c0, beta):
    """Independent node-by-node reference for f = c0 - y^3 + beta|z| using cubic roots."""
    dt, sq = T / N, math.sqrt(T / N)
    Y = [float(v) for v in xi]
    for i in range(N - 1, -1, -1):
        nxt, Y = Y, []
        for j in range(i + 1):
            a = 0.5 * (nxt[j + 1] + nxt[j])
            z = (nxt[j + 1] - nxt[j]) / (2 * sq)
            # dt y^3 + y - (a + dt (c0 + beta|z|)) = 0 has exactly one real root
            roots = np.roots([dt, 0.0, 1.0, -(a + dt * (c0 + beta * abs(z)))])
            y = float(roots[np.argmin(np.abs(roots.imag))].real)
            Y.append(max(y, L[i][j]))
    return Y[0]


def test_fmono_against_cubic_reference():
    lat = build_lattice(1.0, 6)
    xi = lambda x: np.tanh(2 * x)  # noqa: E731
    L = AdaptedField.from_function(lat, lambda t, x: np.minimum(-0.1 + 0.3 * x, xi(x)) if t == 1.0 else -0.1 + 0.3 * x)
    sc = make_scenario(lat, xi, fmono(-0.4, 0.8), barrier=L)
    ref = reference_fmono(1.0, 6, sc.terminal_values(), L, -0.4, 0.8)
    assert solve_rbsde(sc).y0 == pytest.approx(ref, abs=1e-12)


def test_drift_closed_form():
    # f = mu y, xi = c: the implicit step divides by (1 - mu dt) each step
    lat = build_lattice(1.0, 10)
    for mu in (-1.5, 0.5, 3.0):
        sol = solve_rbsde(make_scenario(lat, lambda x: 2.0 + 0 * x, fdrift(mu)))
        assert sol.y0 == pytest.approx(2.0 / (1 - mu * lat.dt) ** 10, rel=1e-12)
        ex = solve_rbsde(make_scenario(lat, lambda x: 2.0 + 0 * x, fdrift(mu)), SchemeOptions(y_evaluation="explicit"))
        assert ex.y0 == pytest.approx(2.0 * (1 + mu * lat.dt) ** 10, rel=1e-12)


def test_quadratic_on_linear_terminal():
    # Z = 1 everywhere, so Y_0 = T exactly
    sol = solve_rbsde(make_scenario(build_lattice(2.0, 40), lambda x: x, fquad(1.0)))
    assert sol.y0 == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(sol.Z.flat(), 1.0)


def test_driverless_is_martingale():
    lat = build_lattice(1.0, 12)
    sol = solve_rbsde(make_scenario(lat, lambda x: x**2, f0()))
    for i in range(13):
        np.testing.assert_allclose(sol.Y[i], lat.states(i) ** 2 + (1.0 - lat.time(i)), atol=1e-12)
    assert sol.dK.max_abs() == 0.0


def test_frozen_fmono_value():
    # value computed once with this scheme at N=16 and kept as a regression anchor
    lat = build_lattice(1.0, 16)
    sc = make_scenario(
        lat, np.tanh, fmono(0.2, 1.0), barrier=lambda t, x: np.full_like(x, -0.1) if t < 1 else np.minimum(-0.1, np.tanh(x))
    )
    sol = solve_rbsde(sc)
    assert sol.y0 == pytest.approx(0.5609626977144361, abs=1e-12)
    assert sol.Z[0][0] == pytest.approx(0.17733106044499403, abs=1e-12)


def test_determinism_bitwise():
    lat = build_lattice(1.0, 30)
    sc = make_scenario(lat, np.tanh, add(fmono(0.1, 0.5), fdrift(0.3)), barrier=lambda t, x: np.minimum(0.2 * x, np.tanh(x)))
    a, b = solve_rbsde(sc), solve_rbsde(sc)
    for f, g in ((a.Y, b.Y), (a.Z, b.Z), (a.dK, b.dK)):
        assert all(np.array_equal(p, q) for p, q in zip(f, g))


def test_reflection_fields():
    lat = build_lattice(1.0, 20)
    sc = make_scenario(lat, lambda x: 0.0 * x, fmono(-1.0, 0.0), barrier=lambda t, x: np.full_like(x, -0.2) if t < 1 else 0 * x)
    sol = solve_rbsde(sc)
    rep = sol.residual_report
    assert rep.ok()
    assert sol.dK.max() > 0
    # dK is positive only on the contact set
    for i in range(lat.N):
        off = sol.Y[i] > sc.barrier[i]
        assert np.all(sol.dK[i][off] == 0.0)
    p = path_from_steps(lat, [1, -1] * 10)
    K = sol.K_along(p.j)
    assert K[0] == 0.0 and np.all(np.diff(K) >= 0)


def test_residual_detects_tampering():
    lat = build_lattice(1.0, 8)
    sc = make_scenario(lat, np.tanh, fmono())
    sol = solve_rbsde(sc)
    sol.Y[3][1] += 1e-6
    assert residuals(sol, sc).identity > 1e-7


def test_contraction_guard():
    lat = build_lattice(1.0, 4)
    sc = make_scenario(lat, np.tanh, fdrift(5.0))
    with pytest.raises(ContractionViolated, match="contraction"):
        solve_rbsde(sc)
    # without the guard y - dt*mu*y - a is decreasing and the bracket search gives up
    with pytest.raises(RootNotBracketed, match="clause=root-not-bracketed"):
        solve_rbsde(sc, SchemeOptions(contraction_guard=False))


def test_solver_errors_name_node_and_clause():
    lat = build_lattice(1.0, 4)
    with pytest.raises(MaxIterations, match=r"clause=max-iterations, node=\(3, 0\)"):
        solve_rbsde(make_scenario(lat, np.tanh, fmono()), SchemeOptions(max_root_iters=1))
    bad = Generator(func=lambda t, x, y, z: np.where(y > 0.5, np.nan, -y), name="nan")
    with pytest.raises(NonFiniteValue) as exc:
        solve_rbsde(make_scenario(lat, lambda x: 2 + 0 * x, bad))
    assert exc.value.node is not None


def test_scenario_check():
    lat = build_lattice(1.0, 4)
    with pytest.raises(ScenarioError, match=r"L_T > xi"):
        solve_rbsde(make_scenario(lat, np.tanh, f0(), barrier=0.5))


def test_scheme_options_validation():
    with pytest.raises(InvalidParameter):
        SchemeOptions(y_evaluation="sideways")
    with pytest.raises(InvalidParameter):
        SchemeOptions(root_tol=0)


@given(st.floats(-5, 5), st.floats(-3, 3), st.floats(0.001, 0.5))
def test_implicit_step_root(a, z, dt):
    gen = fmono(0.3, 1.0)
    y = implicit_y_step(np.array([a]), 0.0, np.array([z]), gen, dt)
    assert abs(y[0] - a - dt * gen(0.0, y[0], z)) <= 1e-12


@given(
    st.lists(st.floats(-1, 1), min_size=9, max_size=9),
    st.floats(-0.5, 0.5),
    st.floats(0.0, 0.6),
)
def test_barrier_monotonicity(xi_vals, base, raise_by):
    """Raising L never lowers Y and never lowers dK (same f and xi)."""
    lat = build_lattice(1.0, 8)
    xi = np.array(xi_vals)
    L1 = AdaptedField.from_function(lat, lambda t, x: base + 0.2 * x)
    L1 = AdaptedField([*L1.slices[:-1], np.minimum(L1[8], xi)])
    L2 = AdaptedField([*(s + raise_by for s in L1.slices[:-1]), L1[8]])
    gen = fmono(0.0, 1.0)
    s1 = solve_rbsde(make_scenario(lat, lambda x: xi, gen, barrier=L1))
    s2 = solve_rbsde(make_scenario(lat, lambda x: xi, gen, barrier=L2))
    for i in range(9):
        assert np.all(s2.Y[i] >= s1.Y[i] - 1e-12)
        assert np.all(s2.dK[i] >= s1.dK[i] - 1e-12)
