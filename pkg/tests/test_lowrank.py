import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qpkron.coefficients import SeparableCoefficient, constant
from qpkron.diagnostics import bumps_problem
from qpkron.errors import NumericalBreakdownError, ValidationError
from qpkron.kron_fem import KroneckerMatrix, assemble_preconditioner, densify
from qpkron.lowrank import (LowRankVector, TruncationPolicy, energy_norm, inner, kron_matvec, norm,
                            singular_profile, truncate, truncation_error)
from qpkron.solver import dense_oracle_solve


def rand_lr(rng, n1, n2, k):
    return LowRankVector.from_factors(rng.standard_normal((n1, k)), rng.standard_normal((n2, k)))


def with_singular_values(rng, n, s):
    U, _ = np.linalg.qr(rng.standard_normal((n, len(s))))
    V, _ = np.linalg.qr(rng.standard_normal((n, len(s))))
    return LowRankVector.from_factors(U * s, V)


def laplacian2d(n):
    one = constant(1.0)
    return assemble_preconditioner(SeparableCoefficient(((one, one),)), n)


def test_big_endian_layout():
    U = np.array([[1.0], [2.0]])
    V = np.array([[3.0], [4.0], [5.0]])
    v = LowRankVector.from_factors(U, V)
    assert np.array_equal(v.full(), np.kron(U[:, 0], V[:, 0]))


def test_kron_matvec_rank_and_dense_agreement():
    rng = np.random.default_rng(0)
    L = laplacian2d(16)
    v = rand_lr(rng, 16, 16, 3)
    w = kron_matvec(L, v)
    assert w.rank == L.rank * v.rank
    dense = densify(L) @ v.full()
    assert np.linalg.norm(w.full() - dense) <= 1e-12 * np.linalg.norm(dense)
    assert kron_matvec(L, rand_lr(rng, 16, 16, 1)).rank == 2


def test_identity_matvec():
    rng = np.random.default_rng(1)
    I = KroneckerMatrix(((np.eye(5), np.eye(6)),))
    v = rand_lr(rng, 5, 6, 2)
    assert np.array_equal(kron_matvec(I, v).full(), v.full())


def test_size_mismatch():
    rng = np.random.default_rng(2)
    with pytest.raises(ValidationError):
        kron_matvec(laplacian2d(5), rand_lr(rng, 6, 5, 1))
    with pytest.raises(ValidationError):
        rand_lr(rng, 4, 4, 1) + rand_lr(rng, 5, 4, 1)


def test_add_scale():
    rng = np.random.default_rng(3)
    u, v = rand_lr(rng, 7, 9, 2), rand_lr(rng, 7, 9, 3)
    s = u + v
    assert s.rank == 5
    assert np.allclose(s.full(), u.full() + v.full(), rtol=0, atol=1e-13)
    z = LowRankVector.zeros((7, 9))
    assert np.array_equal((u + z).full(), u.full())
    assert truncate(u * 0.0, TruncationPolicy(rel_tol=1e-12)).rank == 0


def test_truncate_keeps_low_rank_inputs():
    rng = np.random.default_rng(4)
    v1 = rand_lr(rng, 10, 12, 1)
    assert np.allclose(truncate(v1, TruncationPolicy(rel_tol=1e-3)).full(), v1.full(), atol=1e-13)
    v5 = rand_lr(rng, 10, 12, 5)
    t = truncate(v5, TruncationPolicy(max_rank=5))
    assert np.allclose(t.full(), v5.full(), atol=1e-12)


def test_eckart_young_every_k():
    rng = np.random.default_rng(5)
    s = np.sort(rng.uniform(0.01, 1.0, 20))[::-1]
    v = with_singular_values(rng, 64, s)
    for k in range(21):
        t = truncate(v, TruncationPolicy(max_rank=k))
        err = np.linalg.norm(v.full() - t.full())
        tail = np.sqrt(np.sum(s[k:] ** 2))
        assert abs(err - tail) <= 1e-10
        assert abs(truncation_error(v, TruncationPolicy(max_rank=k)) - tail) <= 1e-10


def test_relative_tolerance_rank_choice():
    rng = np.random.default_rng(6)
    s = 10.0 ** -np.arange(8)
    v = with_singular_values(rng, 30, s)
    total = np.linalg.norm(s)
    for tol in (0.5, 2e-3, 9e-4, 1e-6):
        t = truncate(v, TruncationPolicy(rel_tol=tol))
        expected = min(k for k in range(9) if np.linalg.norm(s[k:]) <= tol * total)
        assert t.rank == expected
    assert truncate(v, TruncationPolicy(rel_tol=9e-4)).rank == 4
    both = truncate(v, TruncationPolicy(rel_tol=1e-6, max_rank=2))
    assert both.rank == 2


def test_policy_validation():
    with pytest.raises(ValidationError):
        TruncationPolicy()
    with pytest.raises(ValidationError):
        TruncationPolicy(rel_tol=0.0)
    assert TruncationPolicy(1e-6, 30).describe() == "frobenius;rel_tol=1e-06;max_rank=30"


def test_inner_norm_energy():
    e = np.zeros(4)
    e[1] = 1.0
    v = LowRankVector.from_factors(e, e)
    assert inner(v, v) == 1.0
    L = laplacian2d(16)
    assert energy_norm(LowRankVector.zeros((16, 16)), L) == 0.0
    rng = np.random.default_rng(7)
    w = rand_lr(rng, 16, 16, 3)
    dense = np.sqrt(w.full() @ densify(L) @ w.full())
    assert energy_norm(w, L) == pytest.approx(dense, rel=1e-12)


def test_energy_norm_breakdown():
    neg = KroneckerMatrix(((-np.eye(3), np.eye(3)),))
    v = LowRankVector.from_factors(np.ones(3), np.ones(3))
    with pytest.raises(NumericalBreakdownError):
        energy_norm(v, neg)


@given(arrays(np.float64, (6, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, (5, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, (6, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, (5, 3), elements=st.floats(-3, 3)),
       st.floats(-2, 2))
@settings(max_examples=50, deadline=None)
def test_inner_bilinear_symmetric(U1, V1, U2, V2, t):
    u = LowRankVector.from_factors(U1, V1)
    v = LowRankVector.from_factors(U2, V2)
    assert inner(u, v) == pytest.approx(inner(v, u), abs=1e-10)
    assert inner(u * t, v) == pytest.approx(t * inner(u, v), abs=1e-9)
    assert inner(u, v) == pytest.approx(u.full() @ v.full(), abs=1e-9)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_parallelogram_identity(seed):
    rng = np.random.default_rng(seed)
    L = laplacian2d(8)
    u, v = rand_lr(rng, 8, 8, 2), rand_lr(rng, 8, 8, 2)
    lhs = energy_norm(u + v, L) ** 2 + energy_norm(u - v, L) ** 2
    rhs = 2 * energy_norm(u, L) ** 2 + 2 * energy_norm(v, L) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_singular_profile():
    rng = np.random.default_rng(8)
    v = rand_lr(rng, 9, 11, 1)
    s = singular_profile(v)
    assert s.size == 1
    assert np.allclose(singular_profile(v.matrix())[1:], 0, atol=1e-12 * s[0])
    assert norm(v) == pytest.approx(s[0], rel=1e-12)


def test_rank_decay_of_bump_solution():
    prob = bumps_problem(8, 95)
    u = dense_oracle_solve(prob.A, prob.rhs).reshape(95, 95)
    s = singular_profile(u)
    assert np.nonzero(s / s[0] < 1e-6)[0][0] < 40
