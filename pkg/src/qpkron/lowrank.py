"""Low-rank vectors in the two-dimensional separated format.

A 2D grid function is stored as ``U @ V.T`` with ``U`` of shape (n1, K) and
``V`` of shape (n2, K); its long (big-endian) vector is the C-order ravel of
that n1 x n2 matrix.  In 1D the format degenerates to a plain vector held as a
single column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalBreakdownError, ValidationError


@dataclass(frozen=True)
class TruncationPolicy:
    """Rank truncation rule: relative Frobenius tolerance and/or a rank cap.

    When both are given the smaller resulting rank wins.
    """

    rel_tol: float | None = None
    max_rank: int | None = None

    def __post_init__(self):
        if self.rel_tol is None and self.max_rank is None:
            raise ValidationError("truncation needs rel_tol or max_rank")
        if self.rel_tol is not None and self.rel_tol <= 0:
            raise ValidationError("rel_tol must be positive")
        if self.max_rank is not None and self.max_rank < 0:
            raise ValidationError("max_rank must be nonnegative")

    def describe(self) -> str:
        parts = []
        if self.rel_tol is not None:
            parts.append(f"rel_tol={self.rel_tol:g}")
        if self.max_rank is not None:
            parts.append(f"max_rank={self.max_rank}")
        return "frobenius;" + ";".join(parts)


@dataclass(frozen=True, eq=False)
class LowRankVector:
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.factors or len(self.factors) > 2:
            raise ValidationError("only d = 1 or d = 2 is supported")
        ks = {f.shape[1] for f in self.factors}
        if len(ks) != 1 or any(f.ndim != 2 for f in self.factors):
            raise ValidationError("all factor blocks need the same number of columns")
        if self.d == 1 and self.factors[0].shape[1] != 1:
            raise ValidationError("1D vectors are stored as a single column")

    # construction ---------------------------------------------------------
    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "LowRankVector":
        return cls((np.asarray(vec, dtype=float).reshape(-1, 1),))

    @classmethod
    def from_factors(cls, U: np.ndarray, V: np.ndarray) -> "LowRankVector":
        U = np.asarray(U, dtype=float)
        V = np.asarray(V, dtype=float)
        if U.ndim == 1:
            U, V = U[:, None], V[:, None]
        return cls((U, V))

    @classmethod
    def from_matrix(cls, X: np.ndarray, policy: TruncationPolicy | None = None) -> "LowRankVector":
        """Separated representation of an n1 x n2 array via its SVD."""
        W, s, Zt = np.linalg.svd(np.asarray(X, dtype=float), full_matrices=False)
        k = _choose_rank(s, policy) if policy is not None else int(np.sum(s > 0))
        return cls((W[:, :k] * s[:k], Zt[:k].T))

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "LowRankVector":
        if len(shape) == 1:
            return cls.from_vector(np.zeros(shape[0]))
        return cls(tuple(np.zeros((n, 0)) for n in shape))

    # properties -----------------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    def matrix(self) -> np.ndarray:
        if self.d == 1:
            return self.factors[0][:, 0].copy()
        U, V = self.factors
        return U @ V.T

    def full(self) -> np.ndarray:
        """Long vector (big-endian ordering)."""
        return self.matrix().ravel()

    # arithmetic -----------------------------------------------------------
    def __add__(self, other: "LowRankVector") -> "LowRankVector":
        return add(self, other)

    def __sub__(self, other: "LowRankVector") -> "LowRankVector":
        return add(self, scale(other, -1.0))

    def __mul__(self, t: float) -> "LowRankVector":
        return scale(self, t)

    __rmul__ = __mul__

    def __neg__(self) -> "LowRankVector":
        return scale(self, -1.0)


def _check_shapes(u: LowRankVector, v: LowRankVector) -> None:
    if u.shape != v.shape:
        raise ValidationError(f"size mismatch: {u.shape} vs {v.shape}")


def add(u: LowRankVector, v: LowRankVector) -> LowRankVector:
    """Sum by concatenation of factor blocks; rank(u+v) = rank(u) + rank(v)."""
    _check_shapes(u, v)
    if u.d == 1:
        return LowRankVector.from_vector(u.factors[0][:, 0] + v.factors[0][:, 0])
    return LowRankVector(tuple(np.hstack([a, b]) for a, b in zip(u.factors, v.factors)))


def scale(u: LowRankVector, t: float) -> LowRankVector:
    return LowRankVector((u.factors[0] * t,) + u.factors[1:])


def kron_matvec(A, v: LowRankVector) -> LowRankVector:
    """Apply a KroneckerMatrix term by term; output rank = rank(A) * rank(v)."""
    if tuple(A.dims) != v.shape:
        raise ValidationError(f"size mismatch: operator {A.dims} vs vector {v.shape}")
    if v.d == 1:
        x = v.factors[0][:, 0]
        return LowRankVector.from_vector(sum(t[0] @ x for t in A.terms))
    U, V = v.factors
    blocks_u = [t[0] @ U for t in A.terms]
    blocks_v = [t[1] @ V for t in A.terms]
    return LowRankVector((np.hstack(blocks_u), np.hstack(blocks_v)))


def inner(u: LowRankVector, v: LowRankVector) -> float:
    """Euclidean inner product of the long vectors, from univariate Gram matrices."""
    _check_shapes(u, v)
    if u.d == 1:
        return float(u.factors[0][:, 0] @ v.factors[0][:, 0])
    G1 = u.factors[0].T @ v.factors[0]
    G2 = u.factors[1].T @ v.factors[1]
    return float(np.sum(G1 * G2))


def _compressed(v: LowRankVector) -> LowRankVector:
    # Gram sums of a difference of nearly equal vectors cancel down to sqrt(eps)
    # relative accuracy; orthogonalizing first moves the cancellation into the
    # small core, where it costs only eps.
    if v.d == 1 or v.rank <= 1:
        return v
    Wu, s, Wv = orthogonal_core(v)
    return LowRankVector((Wu * s, Wv))


def norm(u: LowRankVector) -> float:
    if u.d == 2 and u.rank > 1:
        return float(np.linalg.norm(orthogonal_core(u)[1]))
    return float(np.sqrt(max(inner(u, u), 0.0)))


def energy_norm(v: LowRankVector, operator) -> float:
    """sqrt(v . (Lambda0 v)) for a symmetric positive definite KroneckerMatrix."""
    v = _compressed(v)
    sq = inner(v, kron_matvec(operator, v))
    if sq < -1e-14 * max(1.0, inner(v, v)):
        raise NumericalBreakdownError(f"negative energy {sq:.3e}")
    return float(np.sqrt(max(sq, 0.0)))


def _choose_rank(s: np.ndarray, policy: TruncationPolicy) -> int:
    k = s.size
    if policy.rel_tol is not None:
        total = np.sqrt(np.sum(s**2))
        # tails[j] = norm of s[j:]
        tails = np.sqrt(np.cumsum((s**2)[::-1])[::-1])
        tails = np.append(tails, 0.0)
        ok = np.nonzero(tails <= policy.rel_tol * total)[0]
        k = int(ok[0]) if ok.size else s.size
    if policy.max_rank is not None:
        k = min(k, policy.max_rank)
    return k


def orthogonal_core(v: LowRankVector) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Wu, s, Wv) with v = Wu diag(s) Wv^T, Wu and Wv orthonormal columns.

    Never forms the n1 x n2 matrix: QR of both factor blocks, SVD of the
    K x K core.
    """
    U, V = v.factors
    if v.rank == 0:
        return np.zeros((U.shape[0], 0)), np.zeros(0), np.zeros((V.shape[0], 0))
    Qu, Ru = sla.qr(U, mode="economic")
    Qv, Rv = sla.qr(V, mode="economic")
    W, s, Zt = np.linalg.svd(Ru @ Rv.T, full_matrices=False)
    return Qu @ W, s, Qv @ Zt.T


def truncate(v: LowRankVector, policy: TruncationPolicy | None) -> LowRankVector:
    """Best Frobenius-norm approximation of rank chosen by ``policy``."""
    if policy is None or v.d == 1:
        return v
    Wu, s, Wv = orthogonal_core(v)
    k = _choose_rank(s, policy)
    return LowRankVector((Wu[:, :k] * s[:k], Wv[:, :k]))


def truncation_error(v: LowRankVector, policy: TruncationPolicy) -> float:
    """Frobenius norm of the discarded singular value tail."""
    if v.d == 1:
        return 0.0
    _, s, _ = orthogonal_core(v)
    k = _choose_rank(s, policy)
    return float(np.sqrt(np.sum(s[k:] ** 2)))


def singular_profile(v) -> np.ndarray:
    """Descending singular values of the n1 x n2 matricization."""
    if isinstance(v, LowRankVector):
        if v.d != 2:
            raise ValidationError("singular profile needs d = 2")
        s = orthogonal_core(v)[1]
    else:
        s = np.linalg.svd(np.asarray(v, dtype=float), compute_uv=False)
    return np.sort(s)[::-1]
