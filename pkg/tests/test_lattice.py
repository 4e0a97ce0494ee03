import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbsde_lab.errors import InvalidParameter, LatticeMismatch, SliceMismatch
from rbsde_lab.lattice import (
    AdaptedField,
    TimeGrid,
    backward_expectation,
    build_lattice,
    conditional_expectation,
    expectation_at_root,
    martingale_coefficient,
    path_from_steps,
    same_lattice,
    sample_path,
    sample_paths,
)


def test_states_and_times():
    lat = build_lattice(2.0, 4)
    assert lat.dt == 0.5
    np.testing.assert_allclose(lat.states(2), [-2 * math.sqrt(0.5), 0.0, 2 * math.sqrt(0.5)])
    assert lat.time(4) == 2.0
    np.testing.assert_array_equal(lat.grid.times, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert lat.node_count() == 15


def test_terminal_time_exact_for_awkward_T():
    grid = TimeGrid(0.3, 7)
    assert grid.time(7) == 0.3
    assert grid.times[-1] == 0.3


@pytest.mark.parametrize("T,N", [(0.0, 4), (-1.0, 4), (math.inf, 4), (1.0, 0), (1.0, 2.5)])
def test_bad_grid(T, N):
    with pytest.raises(InvalidParameter):
        TimeGrid(T, N)


def test_slice_out_of_range():
    lat = build_lattice(1.0, 3)
    with pytest.raises(SliceMismatch):
        lat.states(4)


def test_weights_binomial():
    lat = build_lattice(1.0, 4)
    np.testing.assert_allclose(lat.weights(4), np.array([1, 4, 6, 4, 1]) / 16)


def test_log_space_weights_match_exact():
    big = build_lattice(1.0, 1500)
    w = big.weights(60)
    exact = np.array([math.comb(60, k) for k in range(61)], dtype=float) / 2.0**60
    np.testing.assert_allclose(w, exact, rtol=1e-10, atol=1e-300)
    assert big.weights(1500).sum() == pytest.approx(1.0, abs=1e-12)


def test_adapted_field_shape_check():
    with pytest.raises(SliceMismatch):
        AdaptedField([[0.0], [1.0, 2.0, 3.0]])
    with pytest.raises(SliceMismatch):
        AdaptedField([])


def test_field_helpers():
    lat = build_lattice(1.0, 3)
    f = AdaptedField.from_function(lat, lambda t, x: x + t)
    assert len(f) == 4
    assert f.argmax() == (3, 3)
    assert f.max() == pytest.approx(1.0 + 3 * math.sqrt(1 / 3))
    assert AdaptedField.constant(lat, 2.0, n_slices=3).flat().tolist() == [2.0] * 6
    g = f.combine(f, lambda a, b: a - b)
    assert g.max_abs() == 0.0
    with pytest.raises(SliceMismatch):
        f.combine(AdaptedField.constant(lat, 0.0, n_slices=2), np.add)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
def test_one_step_representation_is_exact(values):
    v = np.array(values)
    lat = build_lattice(1.0, len(v) - 1)
    a = conditional_expectation(lat, v)
    z = martingale_coefficient(lat, v)
    np.testing.assert_allclose(a + z * lat.sqrt_dt, v[1:], rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(a - z * lat.sqrt_dt, v[:-1], rtol=1e-12, atol=1e-9)


def test_brownian_moments():
    lat = build_lattice(1.5, 30)
    xT = lat.states(30)
    m = backward_expectation(lat, xT)
    for i in range(31):
        np.testing.assert_allclose(m[i], lat.states(i), atol=1e-12)
    assert expectation_at_root(lat, xT**2) == pytest.approx(1.5, abs=1e-12)
    np.testing.assert_allclose(martingale_coefficient(lat, xT), 1.0)


def test_expectation_weights_agree_with_recursion(rng):
    lat = build_lattice(1.0, 12)
    v = rng.normal(size=13)
    assert expectation_at_root(lat, v) == pytest.approx(backward_expectation(lat, v)[0][0], abs=1e-13)


def test_same_lattice():
    same_lattice(build_lattice(1.0, 4), build_lattice(1.0, 4))
    with pytest.raises(LatticeMismatch):
        same_lattice(build_lattice(1.0, 4), build_lattice(1.0, 5))


def test_sampling_is_seeded():
    lat = build_lattice(1.0, 10)
    a, b = sample_paths(lat, 50, seed=7), sample_paths(lat, 50, seed=7)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_paths(lat, 50, seed=8))
    assert np.all(np.diff(a, axis=1) >= 0) and np.all(np.diff(a, axis=1) <= 1)
    p = sample_path(lat, seed=3)
    np.testing.assert_allclose(p.states[1:] - p.states[:-1], p.steps * lat.sqrt_dt)


def test_path_from_steps():
    lat = build_lattice(1.0, 4)
    p = path_from_steps(lat, [1, 1, -1, 1])
    assert p.j.tolist() == [0, 1, 2, 2, 3]
    assert p.states[-1] == pytest.approx(2 * lat.sqrt_dt)
    with pytest.raises(InvalidParameter):
        path_from_steps(lat, [1, 0, 1, 1])
