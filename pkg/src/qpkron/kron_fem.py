"""Univariate P1 matrices and Kronecker-structured stiffness assembly.

Index convention (big-endian): the 2D unknown (i1, i2) sits at position
``i2 + i1*n2`` of the long vector, i.e. the C-order ravel of an n1 x n2 array.
With that convention ``kron(B1, B2) @ vec(X) == vec(B1 @ X @ B2.T)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.sparse as sp

from .coefficients import SeparableFunction, UniformGrid, UnivariateFactor
from .errors import UnsupportedDimensionError, ValidationError
from .quadrature import ElementQuadrature, quadrature_for

MAX_DENSE = 10**5


@dataclass(frozen=True, eq=False)
class TridiagonalMatrix:
    """Symmetric tridiagonal matrix on interior nodes.

    ``edge`` keeps the couplings of the first and last interior node to the
    eliminated Dirichlet nodes; they do not enter products but are needed for
    full-row lumping.
    """

    main: np.ndarray
    off: np.ndarray
    edge: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.off.size != self.main.size - 1:
            raise ValidationError("off-diagonal must have length n - 1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.main.size, self.main.size)

    @property
    def n(self) -> int:
        return self.main.size

    def __matmul__(self, x):
        x = np.asarray(x, dtype=float)
        main = self.main if x.ndim == 1 else self.main[:, None]
        off = self.off if x.ndim == 1 else self.off[:, None]
        y = main * x
        y[:-1] += off * x[1:]
        y[1:] += off * x[:-1]
        return y

    def __mul__(self, t: float) -> "TridiagonalMatrix":
        return TridiagonalMatrix(self.main * t, self.off * t, (self.edge[0] * t, self.edge[1] * t))

    __rmul__ = __mul__

    def to_sparse(self) -> sp.csr_matrix:
        return sp.diags([self.off, self.main, self.off], [-1, 0, 1], format="csr")

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def banded(self) -> np.ndarray:
        """Upper banded storage for ``scipy.linalg.solveh_banded``."""
        ab = np.zeros((2, self.n))
        ab[0, 1:] = self.off
        ab[1] = self.main
        return ab


@dataclass(frozen=True, eq=False)
class DiagonalMatrix:
    diag: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.diag.size, self.diag.size)

    @property
    def n(self) -> int:
        return self.diag.size

    def __matmul__(self, x):
        x = np.asarray(x, dtype=float)
        return self.diag * x if x.ndim == 1 else self.diag[:, None] * x

    def __mul__(self, t: float) -> "DiagonalMatrix":
        return DiagonalMatrix(self.diag * t)

    __rmul__ = __mul__

    def to_sparse(self) -> sp.csr_matrix:
        return sp.diags(self.diag, format="csr")

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag)


Factor = Union[TridiagonalMatrix, DiagonalMatrix, np.ndarray]


def _to_sparse(m: Factor):
    return sp.csr_matrix(m) if isinstance(m, np.ndarray) else m.to_sparse()


def _to_dense(m: Factor) -> np.ndarray:
    return np.asarray(m, dtype=float) if isinstance(m, np.ndarray) else m.to_dense()


@dataclass(frozen=True, eq=False)
class KroneckerMatrix:
    """Sum of Kronecker products ``sum_k F_k1 (x) ... (x) F_kd``.

    ``sum_factors`` is set for Kronecker sums ``A1 (x) M2 + M1 (x) A2`` (or a
    single ``A1`` in 1D) and holds ``((A1, M1), (A2, M2))``; sinc inverses and
    fast diagonalization need it.
    """

    terms: tuple[tuple[Factor, ...], ...]
    sum_factors: tuple[tuple[Factor, Factor | None], ...] | None = field(default=None)

    def __post_init__(self):
        if not self.terms:
            raise ValidationError("Kronecker matrix needs at least one term")
        dims = self.dims
        for term in self.terms:
            if len(term) != len(dims) or any(f.shape != (n, n) for f, n in zip(term, dims)):
                raise ValidationError("inconsistent Kronecker factor sizes")

    @property
    def d(self) -> int:
        return len(self.terms[0])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.terms[0])

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def rank(self) -> int:
        return len(self.terms)

    def to_sparse(self) -> sp.csr_matrix:
        out = None
        for term in self.terms:
            k = _to_sparse(term[0])
            for f in term[1:]:
                k = sp.kron(k, _to_sparse(f), format="csr")
            out = k if out is None else out + k
        return out.tocsr()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Product with a full (big-endian) vector without forming the matrix."""
        x = np.asarray(x, dtype=float)
        if self.d == 1:
            return sum(t[0] @ x for t in self.terms)
        X = x.reshape(self.dims)
        out = np.zeros_like(X)
        for f1, f2 in self.terms:
            out += f1 @ (f2 @ X.T).T
        return out.ravel()

    def scaled(self, t: float) -> "KroneckerMatrix":
        terms = tuple((term[0] * t,) + tuple(term[1:]) for term in self.terms)
        sf = None
        if self.sum_factors is not None:
            sf = tuple((a * t, m) for a, m in self.sum_factors)
        return KroneckerMatrix(terms, sf)


def densify(K: KroneckerMatrix, max_size: int = MAX_DENSE) -> np.ndarray:
    """Expand all Kronecker terms into a dense N x N array (oracle use only)."""
    if K.size > max_size:
        raise ValidationError(f"refusing to densify N = {K.size} > {max_size} unknowns")
    out = np.zeros((K.size, K.size))
    for term in K.terms:
        k = _to_dense(term[0])
        for f in term[1:]:
            k = np.kron(k, _to_dense(f))
        out += k
    return out


def export_csv(K: KroneckerMatrix, path, max_size: int = 4096) -> None:
    """Write the densified matrix as CSV for debugging."""
    dense = densify(K, max_size)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(dense.tolist())


def kronecker_rank(d: int, R: int) -> int:
    """Kronecker rank d*R of the lumped stiffness matrix for a rank-R coefficient."""
    return d * R


# -- univariate assembly -----------------------------------------------------

def _matrices_from_quadrature(quad: ElementQuadrature, weight: np.ndarray):
    n, h = quad.n, quad.h
    left, right = quad.hats()
    ne = n + 1
    k_e = np.bincount(quad.elem, quad.w * weight, ne) / h**2
    m_ll = np.bincount(quad.elem, quad.w * weight * left * left, ne)
    m_lr = np.bincount(quad.elem, quad.w * weight * left * right, ne)
    m_rr = np.bincount(quad.elem, quad.w * weight * right * right, ne)
    # element e couples full nodes e and e+1; interior node j (1..n) is DOF j-1
    stiff_main = k_e[:-1] + k_e[1:]
    stiff_off = -k_e[1:-1]
    mass_main = m_rr[:-1] + m_ll[1:]
    mass_off = m_lr[1:-1]
    stiffness = TridiagonalMatrix(stiff_main, stiff_off, (-k_e[0], -k_e[-1]))
    mass = TridiagonalMatrix(mass_main, mass_off, (m_lr[0], m_lr[-1]))
    return stiffness, mass


def assemble_1d(factor: UnivariateFactor, grid) -> tuple[TridiagonalMatrix, TridiagonalMatrix]:
    """Weighted P1 stiffness and mass matrices for one univariate factor.

    Entries are ``int a phi_i' phi_j'`` and ``int a phi_i phi_j`` over the
    interior hats of ``grid``.
    """
    n = grid if isinstance(grid, (int, np.integer)) else UniformGrid.of(grid).sizes[0]
    if n < 2:
        raise ValidationError("need at least 2 interior nodes")
    quad = quadrature_for(n, factor)
    return _matrices_from_quadrature(quad, factor.fn(quad.x))


def lump_mass(mass: TridiagonalMatrix | DiagonalMatrix) -> DiagonalMatrix:
    """Row-sum lumping of a mass matrix.

    Rows include the couplings to eliminated boundary nodes, so the lumped
    entry is ``int a phi_i`` and the unit-weight result is exactly ``h*I``.
    """
    if isinstance(mass, DiagonalMatrix):
        return mass
    rows = mass.main.copy()
    rows[:-1] += mass.off
    rows[1:] += mass.off
    rows[0] += mass.edge[0]
    rows[-1] += mass.edge[1]
    return DiagonalMatrix(rows)


def _grid(grid, d: int) -> UniformGrid:
    g = UniformGrid.of(grid, d)
    if g.d != d:
        raise ValidationError(f"grid has dimension {g.d}, coefficient has {d}")
    return g


def assemble_kron_stiffness(coeff: SeparableFunction, grid, lumped: bool = True) -> KroneckerMatrix:
    """Stiffness matrix of -div(a grad u) as a Kronecker sum of rank 2R (d=2) or R (d=1).

    With ``lumped=False`` the weighted mass matrices stay tridiagonal and the
    result is the exact Galerkin matrix.
    """
    d = coeff.d
    if d > 2:
        raise UnsupportedDimensionError(
            f"d = {d} is not assembled; Kronecker rank would be {kronecker_rank(d, coeff.rank)}")
    g = _grid(grid, d)
    if d == 1:
        return KroneckerMatrix(tuple((assemble_1d(t[0], g.sizes[0])[0],) for t in coeff.terms))
    terms = []
    for a1, a2 in coeff.terms:
        A1, M1 = assemble_1d(a1, g.sizes[0])
        A2, M2 = assemble_1d(a2, g.sizes[1])
        D1, D2 = (lump_mass(M1), lump_mass(M2)) if lumped else (M1, M2)
        terms += [(A1, D2), (D1, A2)]
    return KroneckerMatrix(tuple(terms))


def assemble_preconditioner(a0: SeparableFunction, grid, lumped: bool = True) -> KroneckerMatrix:
    """Rank-1 product coefficient a0 -> Kronecker sum A1 (x) D2 + D1 (x) A2."""
    if a0.rank != 1:
        raise ValidationError("preconditioner coefficient must have rank 1 to stay cheaply invertible")
    d = a0.d
    if d > 2:
        raise UnsupportedDimensionError(f"d = {d} is not supported")
    g = _grid(grid, d)
    if d == 1:
        A1 = assemble_1d(a0.terms[0][0], g.sizes[0])[0]
        return KroneckerMatrix(((A1,),), ((A1, None),))
    (a1, a2), = a0.terms
    A1, M1 = assemble_1d(a1, g.sizes[0])
    A2, M2 = assemble_1d(a2, g.sizes[1])
    D1, D2 = (lump_mass(M1), lump_mass(M2)) if lumped else (M1, M2)
    return KroneckerMatrix(((A1, D2), (D1, A2)), ((A1, D1), (A2, D2)))


def load_vector(factor: UnivariateFactor, n: int) -> np.ndarray:
    quad = quadrature_for(n, factor)
    return quad.load(factor.fn(quad.x))


def assemble_rhs(f: SeparableFunction, grid):
    """Load vector ``int f phi_i`` as a LowRankVector of rank R_f."""
    from .lowrank import LowRankVector

    g = _grid(grid, f.d)
    if f.d == 1:
        vec = sum(load_vector(t[0], g.sizes[0]) for t in f.terms)
        return LowRankVector.from_vector(vec)
    cols = [np.column_stack([load_vector(t[ax], g.sizes[ax]) for t in f.terms])
            for ax in range(f.d)]
    return LowRankVector(tuple(cols))


def galerkin_stiffness_2d(coeff: SeparableFunction, grid, max_size: int = MAX_DENSE) -> np.ndarray:
    """Brute-force dense 2D Galerkin assembly with tensor-product hats.

    Loops over the cells of the tensor grid and integrates
    ``a grad(phi_I) . grad(phi_J)`` with a tensor Gauss rule on each cell,
    evaluating ``a`` pointwise. Independent of the Kronecker factorization;
    used as an oracle.
    """
    g = _grid(grid, 2)
    n1, n2 = g.sizes
    if n1 * n2 > max_size:
        raise ValidationError("grid too large for dense oracle assembly")
    q1 = quadrature_for(n1, *coeff.factors(0))
    q2 = quadrature_for(n2, *coeff.factors(1))
    A = np.zeros((n1 * n2, n1 * n2))
    h1, h2 = q1.h, q2.h
    # split quadrature points by cell so each cell is integrated separately
    for e1 in range(n1 + 1):
        s1 = q1.elem == e1
        x1, w1 = q1.x[s1], q1.w[s1]
        r1 = (x1 - e1 * h1) / h1
        for e2 in range(n2 + 1):
            s2 = q2.elem == e2
            x2, w2 = q2.x[s2], q2.w[s2]
            r2 = (x2 - e2 * h2) / h2
            X1, X2 = np.meshgrid(x1, x2, indexing="ij")
            W = np.outer(w1, w2) * coeff(X1, X2)
            R1, R2 = np.meshgrid(r1, r2, indexing="ij")
            nodes, grads = [], []
            for c1, c2 in ((0, 0), (1, 0), (0, 1), (1, 1)):
                i1, i2 = e1 + c1, e2 + c2
                if not (1 <= i1 <= n1 and 1 <= i2 <= n2):
                    continue
                p1 = R1 if c1 else 1 - R1
                p2 = R2 if c2 else 1 - R2
                d1 = (1 if c1 else -1) / h1 * p2
                d2 = (1 if c2 else -1) / h2 * p1
                nodes.append((i2 - 1) + (i1 - 1) * n2)
                grads.append((d1, d2))
            for a, I in enumerate(nodes):
                for b, J in enumerate(nodes):
                    A[I, J] += np.sum(W * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]))
    return A


def lumped_galerkin_2d(coeff: SeparableFunction, grid, max_size: int = MAX_DENSE) -> np.ndarray:
    """Brute-force 2D assembly of the lumped operator.

    The lumped bilinear form keeps the derivative direction exact and replaces
    the transverse product ``phi_j phi_l`` by ``delta_jl phi_j``; its entries are
    2D integrals ``int a d1phi_i d1phi_k phi_j dx`` (and the symmetric term),
    evaluated here with tensor Gauss rules over the cells.
    """
    g = _grid(grid, 2)
    n1, n2 = g.sizes
    if n1 * n2 > max_size:
        raise ValidationError("grid too large for dense oracle assembly")
    q1 = quadrature_for(n1, *coeff.factors(0))
    q2 = quadrature_for(n2, *coeff.factors(1))
    phi1, dphi1 = q1.basis_matrices()
    phi2, dphi2 = q2.basis_matrices()
    X1, X2 = np.meshgrid(q1.x, q2.x, indexing="ij")
    W = np.outer(q1.w, q2.w) * coeff(X1, X2)
    A = np.zeros((n1, n2, n1, n2))
    # term 1: (i1,k1) from d/dx1, j2 == l2 lumped
    t1 = np.einsum("pi,pk,pq,qj->ikj", dphi1, dphi1, W, phi2)
    t2 = np.einsum("pj,pq,qi,qk->jik", phi1, W, dphi2, dphi2)
    for j in range(n2):
        A[:, j, :, j] += t1[:, :, j]
    for j in range(n1):
        A[j, :, j, :] += t2[j]
    return A.reshape(n1 * n2, n1 * n2)
