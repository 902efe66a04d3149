import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkron.coefficients import (SeparableCoefficient, SeparableRhs, UniformGrid, bump_factor,
                                 coeff_bounds, coefficient_1d, constant, evaluate, make_modulated,
                                 make_periodic_bumps, make_piecewise, periodic_two_level, polynomial,
                                 sampled, sine)
from qpkron.errors import DomainError, ValidationError


def test_constant_evaluates_to_value_everywhere():
    a = SeparableCoefficient(((constant(1.0), constant(1.0)),))
    assert evaluate(a, (0.3, 0.9)) == 1.0


def test_rank_one_product_of_linear_factors():
    x = polynomial((0.0, 1.0))
    f = SeparableRhs(((x, x),))
    assert evaluate(f, (0.5, 0.5)) == pytest.approx(0.25, abs=0)


def test_bump_center_value_is_C_plus_height():
    a = make_periodic_bumps(6, height=1.0, C=0.3)
    center = 0.5 / 6
    assert evaluate(a, (center, center)) == pytest.approx(1.3, abs=1e-15)


def test_six_bumps_of_height_one():
    b = bump_factor(6)
    x = np.linspace(0, 1, 60001)
    vals = b(x)
    peaks = (vals[1:-1] > vals[:-2]) & (vals[1:-1] >= vals[2:])
    assert peaks.sum() == 6
    assert vals.max() == pytest.approx(1.0, abs=1e-8)


def test_single_bump_minimum_is_C():
    a = make_periodic_bumps(1, C=0.25)
    lo, hi = coeff_bounds(a, 257)
    assert lo == pytest.approx(0.25, abs=1e-15)
    assert hi == pytest.approx(1.25, abs=1e-12)


def test_bumps_rank_and_positivity():
    a = make_periodic_bumps(8)
    assert a.d == 2 and a.rank == 2
    with pytest.raises(ValidationError):
        make_periodic_bumps(8, C=0.0)


def test_evaluate_outside_domain():
    a = coefficient_1d(constant(2.0))
    with pytest.raises(DomainError):
        evaluate(a, (1.5,))


def test_modulated_range_and_identity():
    a = make_modulated(constant(1.0), 0.3, 4)
    lo, hi = coeff_bounds(a)
    assert lo == pytest.approx(0.7, abs=1e-14) and hi == pytest.approx(1.3, abs=1e-14)
    g = make_piecewise((0.4,), (1.0, 2.0))
    a0 = make_modulated(g, 0.0, 3)
    x = np.linspace(0, 1, 101)
    assert np.array_equal(a0(x), g(x))
    with pytest.raises(ValidationError):
        make_modulated(constant(1.0), 1.0, 2)


def test_modulated_bounds_against_dense_sampling():
    # dense sampling at 10^4 points is the oracle for the min and max
    a = make_modulated(constant(2.0), 0.5, 7)
    x = np.linspace(0, 1, 10_001)
    vals = a(x)
    lo, hi = coeff_bounds(a)
    assert lo <= vals.min() + 1e-12 and hi >= vals.max() - 1e-12
    assert lo == pytest.approx(1.0, abs=1e-6) and hi == pytest.approx(3.0, abs=1e-6)


@given(eps=st.floats(0.0, 0.95), freq=st.integers(1, 20))
@settings(max_examples=30, deadline=None)
def test_modulated_ratio_within_band(eps, freq):
    g = make_piecewise((0.5,), (1.0, 3.0))
    a = make_modulated(g, eps, freq)
    x = np.linspace(0, 1, 10_000)
    r = a(x) / g(x)
    assert np.all(r >= 1 - eps - 1e-12) and np.all(r <= 1 + eps + 1e-12)


def test_piecewise_bounds_and_validation():
    a = coefficient_1d(make_piecewise((0.5,), (1.0, 3.0)))
    assert coeff_bounds(a) == (1.0, 3.0)
    with pytest.raises(ValidationError):
        make_piecewise((0.6, 0.4), (1.0, 2.0, 3.0))
    with pytest.raises(ValidationError):
        make_piecewise((0.5,), (1.0, -2.0))


@given(L=st.integers(1, 12), C=st.floats(0.05, 2.0), frac=st.floats(0.1, 0.9))
@settings(max_examples=25, deadline=None)
def test_generated_coefficients_positive_and_sandwiched(L, C, frac):
    a = make_periodic_bumps(L, support_fraction=frac, C=C)
    lo, hi = coeff_bounds(a, 257)
    x = np.linspace(0, 1, 401)
    vals = a.on_grid(x, x)
    assert vals.min() > 0
    assert lo <= vals.min() + 1e-12 and vals.max() <= hi + 1e-12


def test_two_level_measure():
    f = periodic_two_level(1.0, 3.0, 0.3, 5)
    x = (np.arange(100_000) + 0.5) / 100_000
    assert np.mean(f(x) == 3.0) == pytest.approx(0.3, abs=1e-4)


def test_sampled_interpolates():
    f = sampled((0.0, 0.5, 1.0), (1.0, 2.0, 1.0))
    assert f(0.25) == pytest.approx(1.5)


def test_on_grid_matches_pointwise():
    a = SeparableCoefficient(((constant(1.0), constant(1.0)), (sine(math.pi), sine(2 * math.pi, 0.1))))
    x1, x2 = np.array([0.1, 0.7]), np.array([0.2, 0.4, 0.9])
    G = a.on_grid(x1, x2)
    for i, p in enumerate(x1):
        for j, q in enumerate(x2):
            assert G[i, j] == pytest.approx(evaluate(a, (p, q)), abs=1e-15)


def test_uniform_grid():
    g = UniformGrid.of(7, 2)
    assert g.sizes == (7, 7) and g.h() == 0.125 and g.size == 49
    assert np.allclose(g.nodes(), np.arange(1, 8) / 8)
    with pytest.raises(ValidationError):
        UniformGrid.of(1)


def test_nonpositive_coefficient_rejected():
    with pytest.raises(ValidationError):
        coefficient_1d(sine(2 * math.pi))
