import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkron.coefficients import (coefficient_1d, constant, make_modulated, make_piecewise,
                                 periodic_two_level, sine)
from qpkron.errors import ValidationError
from qpkron.kron_fem import assemble_kron_stiffness, assemble_preconditioner, densify
from qpkron.operator_bounds import (CONTAINMENT_INSTANCE, NON_CONTAINMENT_INSTANCE,
                                    coarse_contraction, compare_homogenized_vs_optimal,
                                    contraction_at, contraction_factor, find_non_containment,
                                    homogenized_coefficient, optimal_constants_from_bounds,
                                    optimal_piecewise_constants, optimal_rho, piecewise_quality,
                                    ratio_bounds, spectral_constants, spectral_report)

two_level = coefficient_1d(make_piecewise((0.5,), (1.0, 3.0)))


def test_ratio_bounds_examples():
    assert ratio_bounds(two_level, two_level) == (1.0, 1.0)
    g = make_piecewise((0.3,), (1.0, 2.0))
    a = make_modulated(g, 0.3, 5)
    lo, hi = ratio_bounds(a, coefficient_1d(g))
    assert lo == pytest.approx(0.7, abs=1e-12) and hi == pytest.approx(1.3, abs=1e-12)
    assert ratio_bounds(two_level, coefficient_1d(constant(2.0))) == (0.5, 1.5)


def test_ratio_bounds_rejects_nonpositive_a0():
    class Fake:
        d = 1
        def factors(self, ax):
            return [sine(2 * math.pi)]
        def on_grid(self, *axes):
            return np.sin(2 * math.pi * axes[0])
    with pytest.raises(ValidationError):
        ratio_bounds(two_level, Fake())


def test_rho_and_q_arithmetic():
    assert optimal_rho(1, 1) == 1
    assert optimal_rho(0.7, 1.3) == pytest.approx(1.0)
    assert optimal_rho(1, 3) == 0.5
    assert contraction_factor(0.7, 1.3) == pytest.approx(0.3)
    assert contraction_factor(2, 2) == 0
    assert contraction_factor(1, 3) == 0.5
    with pytest.raises(ValidationError):
        optimal_rho(0, 1)


def test_coarse_contraction():
    rho, q_hat = coarse_contraction(1, 2, 1, 2)
    assert rho == pytest.approx(0.5 / 4)
    assert q_hat ** 2 == pytest.approx(15 / 16)
    qs = [coarse_contraction(1, 1 + d, 1, 1 + d)[1] for d in (1e-1, 1e-3, 1e-6)]
    assert qs[0] > qs[1] > qs[2] and qs[2] < 3e-3


def test_generalized_eigenvalues_inside_coarse_constants():
    a = coefficient_1d(periodic_two_level(1.0, 4.0, 0.3, 3))
    a0 = coefficient_1d(make_piecewise((0.5,), (1.5, 2.0)))
    A = densify(assemble_kron_stiffness(a, 15))
    L0 = densify(assemble_preconditioner(a0, 15))
    mu_lo, mu_hi = spectral_constants(A, L0)
    rep = spectral_report(a, a0, 15)
    assert mu_lo >= rep.c1 - 1e-12 and mu_hi <= rep.c2 + 1e-12
    assert rep.mu_minus == pytest.approx(mu_lo) and rep.mu_plus == pytest.approx(mu_hi)
    assert rep.q <= rep.q_hat + 1e-15


def test_report_example_modulated():
    a = make_modulated(constant(1.0), 0.3, 8)
    rep = spectral_report(a, coefficient_1d(constant(1.0)))
    assert rep.q == pytest.approx(0.3, abs=1e-12) and rep.rho_star == pytest.approx(1.0, abs=1e-12)
    assert rep.mu_minus is None


@given(st.floats(0.1, 10.0), st.integers(1, 6), st.floats(0.05, 0.9))
@settings(max_examples=25, deadline=None)
def test_scale_invariance_and_pointwise_contraction(t, cells, kappa):
    a = coefficient_1d(periodic_two_level(1.0, 5.0, kappa, cells))
    a0 = coefficient_1d(make_piecewise((0.5,), (1.0, 2.0)))
    lo, hi = ratio_bounds(a, a0)
    q = contraction_factor(lo, hi)
    lo_t, hi_t = ratio_bounds(a, coefficient_1d(make_piecewise((0.5,), (t, 2 * t))))
    assert contraction_factor(lo_t, hi_t) == pytest.approx(q, abs=1e-12)
    x = np.linspace(0, 1, 2001)
    h = a(x) / a0(x)
    rho = optimal_rho(lo, hi)
    assert np.all(np.abs(1 - rho * h) <= q + 1e-12)
    rep = spectral_report(a, a0)
    assert rep.q <= rep.q_hat + 1e-15


def test_contraction_at_optimum_is_minimal():
    lo, hi = 0.5, 1.5
    rhos = np.linspace(0.2, 1.8, 801)
    qs = [contraction_at(r, lo, hi) for r in rhos]
    assert rhos[int(np.argmin(qs))] == pytest.approx(optimal_rho(lo, hi), abs=2e-3)


def test_piecewise_two_subdomains_equal_ratios():
    opt = optimal_piecewise_constants(sum_two((1.0, 2.0), (2.0, 4.0)), (0.5,))
    assert opt.xi == pytest.approx((2.0, 2.0))
    assert opt.ratio == pytest.approx(2.0)


def sum_two(levels1, levels2):
    from qpkron.coefficients import sum_factors
    f1 = periodic_two_level(levels1[0], levels1[1], 0.5, 4, 0.0, 0.5)
    f2 = periodic_two_level(levels2[0], levels2[1], 0.5, 4, 0.5, 1.0)
    return sum_factors(f1, f2)


def test_single_subdomain_reproduces_constant_case():
    a = periodic_two_level(1.0, 3.0, 0.4, 5)
    opt = optimal_piecewise_constants(a)
    assert opt.q == pytest.approx(0.5)
    assert opt.q_checked == pytest.approx(0.5)


def test_two_subdomain_interval_against_brute_force():
    lower, upper = (1.0, 2.0), (3.0, 4.0)
    opt = optimal_piecewise_constants(sum_two((1.0, 3.0), (2.0, 4.0)), (0.5,))
    assert opt.xi == pytest.approx((4 / 3, 2.0))
    ratios = np.linspace(0.5, 4.0, 3501)
    qs = np.array([piecewise_quality(lower, upper, (1.0, r)) for r in ratios])
    best = qs.min()
    inside = (ratios >= 4 / 3 - 1e-9) & (ratios <= 2 + 1e-9)
    assert np.allclose(qs[inside], best, atol=1e-12)
    assert np.all(qs[~inside] > best + 1e-6)
    assert opt.q == pytest.approx(best, abs=1e-12)
    assert opt.xi[0] <= opt.ratio <= opt.xi[1]


@given(st.lists(st.tuples(st.floats(0.5, 5.0), st.floats(1.0, 4.0)), min_size=3, max_size=3))
@settings(max_examples=20, deadline=None)
def test_three_subdomains_brute_force(pairs):
    lower = np.array([p[0] for p in pairs])
    upper = lower * np.array([p[1] for p in pairs])
    c = optimal_constants_from_bounds(lower, upper)
    q = piecewise_quality(lower, upper, c)
    grid = np.exp(np.linspace(-2.5, 2.5, 41))
    brute = min(piecewise_quality(lower, upper, (1.0, r2, r3)) for r2, r3 in itertools.product(grid, grid))
    assert q <= brute + 1e-12
    assert np.sum(1 / c) == pytest.approx(1.0)


def test_empty_subdomain():
    with pytest.raises(ValidationError):
        optimal_piecewise_constants(make_piecewise((0.5,), (1.0, 2.0)), (0.5, 0.5))


def test_harmonic_means():
    assert homogenized_coefficient(constant(2.5)) == pytest.approx(2.5, rel=1e-14)
    f = periodic_two_level(1.0, 3.0, 0.5, 6)
    assert homogenized_coefficient(f) == pytest.approx(1.5, rel=1e-12)
    g = periodic_two_level(2.0, 7.0, 0.3, 5)
    val = homogenized_coefficient(g)
    assert 2.0 < val < 7.0
    assert val == pytest.approx(2.0 * 7.0 / (0.3 * 2.0 + 0.7 * 7.0), rel=1e-12)


def test_containment_case_gives_equal_q():
    rep = compare_homogenized_vs_optimal(**CONTAINMENT_INSTANCE)
    assert rep.hat_ratio_inside_xi
    assert rep.q_homogenized == pytest.approx(rep.q_optimal, abs=1e-12)


def test_non_containment_case():
    rep = compare_homogenized_vs_optimal(**NON_CONTAINMENT_INSTANCE)
    assert not rep.hat_ratio_inside_xi
    assert rep.q_homogenized > rep.q_optimal
    assert rep.zeta_contains_xi
    assert len(find_non_containment()) > 0


@given(beta=st.floats(0.2, 0.8), k1=st.floats(0.1, 0.9), k2=st.floats(0.1, 0.9),
       lo1=st.floats(0.5, 3.0), r1=st.floats(1.2, 5.0), lo2=st.floats(0.5, 3.0), r2=st.floats(1.2, 5.0))
@settings(max_examples=25, deadline=None)
def test_zeta_always_contains_xi(beta, k1, k2, lo1, r1, lo2, r2):
    rep = compare_homogenized_vs_optimal(beta, k1, k2, (lo1, lo1 * r1), (lo2, lo2 * r2))
    assert rep.zeta[0] <= rep.xi[0] + 1e-12 and rep.zeta[1] >= rep.xi[1] - 1e-12
    assert rep.zeta[0] < rep.hat_ratio < rep.zeta[1]
    assert rep.q_homogenized >= rep.q_optimal - 1e-12
