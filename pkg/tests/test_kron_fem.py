import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkron.coefficients import (SeparableCoefficient, SeparableRhs, UniformGrid, coefficient_1d,
                                 constant, make_periodic_bumps, make_piecewise, sine)
from qpkron.diagnostics import assembly_difference
from qpkron.errors import UnsupportedDimensionError, ValidationError
from qpkron.kron_fem import (DiagonalMatrix, KroneckerMatrix, assemble_1d, assemble_kron_stiffness,
                             assemble_preconditioner, assemble_rhs, densify, export_csv,
                             galerkin_stiffness_2d, lump_mass)
from qpkron.lowrank import LowRankVector, kron_matvec
from qpkron.operator_bounds import ratio_bounds


def test_unit_coefficient_matrices():
    n = 9
    h = 1 / (n + 1)
    A, M = assemble_1d(constant(1.0), n)
    K = A.to_dense()
    assert np.allclose(np.diag(K), 2 / h, rtol=1e-14)
    assert np.allclose(np.diag(K, 1), -1 / h, rtol=1e-14)
    Md = M.to_dense()
    assert np.allclose(np.diag(Md), 4 * h / 6, rtol=1e-14)
    assert np.allclose(np.diag(Md, 1), h / 6, rtol=1e-14)


def test_constant_weight_scales_linearly():
    A1, M1 = assemble_1d(constant(1.0), 12)
    A3, M3 = assemble_1d(constant(3.0), 12)
    assert np.allclose(A3.to_dense(), 3 * A1.to_dense(), rtol=1e-14)
    assert np.allclose(M3.to_dense(), 3 * M1.to_dense(), rtol=1e-14)


def test_aligned_piecewise_matches_element_closed_form():
    # n = 9, h = 0.1; jump at x = 0.4 is an element boundary
    n, h = 9, 0.1
    A, M = assemble_1d(make_piecewise((0.4,), (1.0, 3.0)), n)
    elem = np.where((np.arange(n + 1) + 0.5) * h < 0.4, 1.0, 3.0)
    K = np.zeros((n + 2, n + 2))
    Mm = np.zeros((n + 2, n + 2))
    for e, c in enumerate(elem):
        K[e:e + 2, e:e + 2] += c / h * np.array([[1, -1], [-1, 1]])
        Mm[e:e + 2, e:e + 2] += c * h / 6 * np.array([[2, 1], [1, 2]])
    assert np.allclose(A.to_dense(), K[1:-1, 1:-1], rtol=1e-13)
    assert np.allclose(M.to_dense(), Mm[1:-1, 1:-1], rtol=1e-13)


def test_too_small_grid():
    with pytest.raises(ValidationError):
        assemble_1d(constant(1.0), 1)


def test_lumping():
    n = 10
    h = 1 / (n + 1)
    _, M = assemble_1d(constant(1.0), n)
    assert np.allclose(lump_mass(M).diag, h, rtol=1e-14)
    D = DiagonalMatrix(np.arange(1.0, 5.0))
    assert lump_mass(D) is D
    _, Mw = assemble_1d(sine(3.0, 0.5), n)
    # interior rows: lumped entry equals the row sum of the tridiagonal matrix
    Md = Mw.to_dense()
    assert np.allclose(lump_mass(Mw).diag[1:-1], Md.sum(axis=1)[1:-1], rtol=1e-14)


@pytest.mark.parametrize("R", [1, 2])
def test_kronecker_matches_brute_force_galerkin(R):
    assert assembly_difference(16, R) <= 1e-12


def test_kronecker_rank_and_symmetry():
    a = make_periodic_bumps(4)
    A = assemble_kron_stiffness(a, 12)
    assert A.rank == 2 * a.rank
    K = densify(A)
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K)[0] > 0
    a1 = coefficient_1d(constant(1.0), sine(math.pi, 0.2))
    assert assemble_kron_stiffness(a1, 12).rank == 2


def test_laplacian_form():
    n = 8
    h = 1 / (n + 1)
    one = constant(1.0)
    L = densify(assemble_preconditioner(SeparableCoefficient(((one, one),)), n))
    T = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h
    I = np.eye(n)
    assert np.allclose(L, h * (np.kron(T, I) + np.kron(I, T)), rtol=1e-13)
    c = constant(2.5)
    L2 = densify(assemble_preconditioner(SeparableCoefficient(((c, one),)), n))
    assert np.allclose(L2, 2.5 * L, rtol=1e-13)


def test_preconditioner_rules():
    g = make_piecewise((0.5,), (1.0, 2.0))
    L = assemble_preconditioner(coefficient_1d(g), 15)
    assert L.rank == 1 and L.d == 1
    with pytest.raises(ValidationError):
        assemble_preconditioner(make_periodic_bumps(3), 8)


def test_unsupported_dimension():
    one = constant(1.0)
    a3 = SeparableCoefficient(((one, one, one),))
    with pytest.raises(UnsupportedDimensionError, match="rank would be 3"):
        assemble_kron_stiffness(a3, (4, 4, 4))


def test_rhs_rank_one_and_matvec():
    f = SeparableRhs(((sine(2.0), sine(2.0)),))
    b = assemble_rhs(f, 15)
    assert b.rank == 1
    A = assemble_kron_stiffness(make_periodic_bumps(3), 15)
    rng = np.random.default_rng(3)
    v = LowRankVector.from_factors(rng.standard_normal((15, 3)), rng.standard_normal((15, 3)))
    dense = densify(A) @ v.full()
    assert np.allclose(kron_matvec(A, v).full(), dense, rtol=1e-12, atol=1e-12 * np.abs(dense).max())
    assert np.allclose(A.matvec(v.full()), dense, rtol=1e-12, atol=1e-12 * np.abs(dense).max())


def test_densify_identity_and_cap(tmp_path):
    I = KroneckerMatrix(((np.eye(3), np.eye(4)),))
    assert np.array_equal(densify(I), np.eye(12))
    big = assemble_preconditioner(SeparableCoefficient(((constant(1.0), constant(1.0)),)), 400)
    with pytest.raises(ValidationError):
        densify(big)
    export_csv(I, tmp_path / "I.csv")
    assert np.array_equal(np.loadtxt(tmp_path / "I.csv", delimiter=","), np.eye(12))


def test_lumped_galerkin_equivalent_forms():
    a = make_periodic_bumps(3)
    g = UniformGrid.of(10, 2)
    K = densify(assemble_kron_stiffness(a, g, lumped=False))
    assert np.allclose(K, galerkin_stiffness_2d(a, g), rtol=0, atol=1e-12 * np.abs(K).max())


@given(L=st.integers(1, 5), C=st.floats(0.1, 2.0))
@settings(max_examples=10, deadline=None)
def test_rayleigh_quotients_within_ratio_bounds(L, C):
    a = make_periodic_bumps(L, C=C)
    one = constant(1.0)
    a0 = SeparableCoefficient(((one, one),))
    n = 9
    A = densify(assemble_kron_stiffness(a, n))
    L0 = densify(assemble_preconditioner(a0, n))
    mu = np.linalg.eigvals(np.linalg.solve(L0, A)).real
    lo, hi = ratio_bounds(a, a0)
    assert mu.min() >= lo - 1e-10 and mu.max() <= hi + 1e-10
