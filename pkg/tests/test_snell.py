import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbsde_lab.errors import DomainError, ScenarioError, TooLarge
from rbsde_lab.generators import fquad, make_scenario
from rbsde_lab.lattice import AdaptedField, backward_expectation, build_lattice, conditional_expectation
from rbsde_lab.snell import (
    brute_force_snell,
    check_integrability,
    explicit_quadratic,
    integrability_growth,
    lower_bound_chain,
    snell_envelope,
)
from rbsde_lab.solver import residuals, solve_rbsde


def put(lat, K=0.2):
    return AdaptedField.from_function(lat, lambda t, x: np.maximum(K - x, 0.0))


def test_two_step_put_by_hand():
    # terminal payoffs 0.2 + sqrt2, 0.2, 0; exercise is optimal at the lower middle node
    lat = build_lattice(1.0, 2)
    env = snell_envelope(lat, put(lat))
    assert env.value == pytest.approx((0.4 + math.sqrt(2)) / 4 + 0.05, abs=1e-15)
    assert env.value == pytest.approx(0.5035533905932737, abs=1e-15)
    assert brute_force_snell(lat, put(lat)) == pytest.approx(env.value, abs=1e-15)


@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_snell_equals_brute_force(N, seed):
    lat = build_lattice(1.0, N)
    r = np.random.default_rng(seed)
    payoff = AdaptedField(r.normal(size=i + 1) for i in range(N + 1))
    assert abs(snell_envelope(lat, payoff).value - brute_force_snell(lat, payoff)) <= 1e-12


def test_brute_force_cap():
    lat = build_lattice(1.0, 7)
    with pytest.raises(TooLarge):
        brute_force_snell(lat, put(lat))


def test_envelope_structure(rng):
    lat = build_lattice(1.0, 25)
    payoff = AdaptedField(rng.normal(size=i + 1) for i in range(26))
    dec = snell_envelope(lat, payoff)
    assert dec.decomposition_error() <= 1e-13
    for i in range(25):
        assert np.all(dec.N[i] >= payoff[i])
        assert np.all(dec.N[i] >= conditional_expectation(lat, dec.N[i + 1]) - 1e-15)
        assert np.all(dec.dKbar[i] >= 0)
        assert np.all(dec.dKbar[i][dec.N[i] > payoff[i]] == 0)


def test_envelope_of_submartingale_payoff_stops_at_maturity():
    lat = build_lattice(1.0, 10)
    payoff = AdaptedField.from_function(lat, lambda t, x: x**2)  # submartingale
    dec = snell_envelope(lat, payoff)
    np.testing.assert_allclose(dec.N[0], [1.0], atol=1e-12)


def test_explicit_quadratic_constant():
    lat = build_lattice(1.0, 16)
    sol = explicit_quadratic(lat, np.full(17, 0.7), AdaptedField.constant(lat, 0.7))
    assert sol.y0 == pytest.approx(0.7, abs=1e-15)


def test_explicit_quadratic_closed_form():
    for N in (16, 64, 256):
        lat = build_lattice(1.0, N)
        sol = explicit_quadratic(lat, lat.states(N), AdaptedField.constant(lat, -20.0))
        assert sol.y0 == pytest.approx(0.5 * N * math.log(math.cosh(2 * math.sqrt(1 / N))), abs=1e-12)


def test_explicit_quadratic_gap_shrinks_and_solution_fields():
    gaps = []
    for N in (64, 128, 256):
        lat = build_lattice(1.0, N)
        sc = make_scenario(lat, lambda x: x, fquad(1.0), barrier=-20.0)
        ex = explicit_quadratic(lat, sc.terminal_values(), sc.barrier)
        gaps.append(abs(solve_rbsde(sc).y0 - ex.y0))
        # the log-transformed envelope solves the equation up to O(dt) per step
        assert residuals(ex, sc).identity <= 3 * lat.dt
        assert ex.dK.min() >= 0
    assert gaps[0] / gaps[1] >= 1.5 and gaps[1] / gaps[2] >= 1.5


def test_explicit_quadratic_with_binding_barrier():
    lat = build_lattice(1.0, 64)
    xi = lambda x: np.maximum(x, 0.0) - 0.5  # noqa: E731
    sc = make_scenario(
        lat, xi, fquad(1.0), barrier=lambda t, x: np.minimum(0.3 - 0.2 * x, xi(x)) if t == 1.0 else 0.3 - 0.2 * x
    )
    ex = explicit_quadratic(lat, sc.terminal_values(), sc.barrier)
    sol = solve_rbsde(sc)
    assert ex.dK.max() > 0
    assert abs(ex.y0 - sol.y0) < 0.05
    dec = ex.meta["snell"]
    assert dec.decomposition_error() <= 1e-14 * dec.N.max_abs()


def test_explicit_quadratic_errors():
    lat = build_lattice(1.0, 4)
    with pytest.raises(ScenarioError):
        explicit_quadratic(lat, np.zeros(5), AdaptedField.constant(lat, 1.0))
    with pytest.raises(DomainError):
        explicit_quadratic(lat, np.zeros(5), AdaptedField.constant(lat, -1e9))


def test_integrability_linear():
    lat = build_lattice(1.0, 256)
    rep = check_integrability(lat, lat.states(256))
    assert rep.E_exp2xi == pytest.approx(math.cosh(2 / 16) ** 256, rel=1e-12)
    assert abs(rep.E_exp2xi / math.e**2 - 1) < 0.02


def test_integrability_growth_warns():
    with pytest.warns(RuntimeWarning, match="keeps growing"):
        d = integrability_growth(1.0, lambda x: x**2)
    assert d.growing and d.warning


def test_integrability_stable_is_silent():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        d = integrability_growth(1.0, lambda x: x)
    assert not d.growing and d.warning is None


def test_integrability_large_values_stay_finite_in_log():
    lat = build_lattice(1.0, 256)
    rep = check_integrability(lat, lat.states(256) ** 2)
    assert math.isfinite(rep.log_E_exp2xi) and rep.log_E_exp2xi > 300


def test_lower_bound_chain(rng):
    lat = build_lattice(1.0, 20)
    xi = 0.3 * rng.normal(size=21)
    sc = make_scenario(lat, lambda x: xi, fquad(1.0), barrier=-20.0)
    sol = solve_rbsde(sc)
    assert lower_bound_chain(lat, xi, sol.Y) <= 1e-12
    m = backward_expectation(lat, xi)
    assert m[0][0] <= sol.y0
