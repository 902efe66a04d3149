"""Preconditioned fixed-point iteration, truncated PCG and the direct oracle.

The fixed-point map is

    u_k = u_{k-1} - rho * L0^{-1} (A u_{k-1} - f),

with ``L0`` the Kronecker-sum preconditioner.  In 2D every iterate is a
LowRankVector and is truncated once per step, after the full update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .coefficients import SeparableCoefficient, SeparableFunction, UniformGrid
from .errors import DivergenceError, NumericalBreakdownError, ValidationError
from .kron_fem import (KroneckerMatrix, TridiagonalMatrix, assemble_kron_stiffness,
                       assemble_preconditioner, assemble_rhs)
from .lowrank import (LowRankVector, TruncationPolicy, energy_norm, inner, kron_matvec,
                      truncate)
from .operator_bounds import contraction_at, optimal_rho, ratio_bounds
from .sinc_inv import apply_exact_inverse, apply_inverse, build_inverse, exact_inverse

ORACLE_MAX = 10**5
DIVERGENCE_STREAK = 3
# residual growth below this fraction of the reference is round-off, not divergence
ROUNDOFF_FLOOR = 1e-11
# a truncation plateau drifts by ratios of about 1.001; growth must exceed this margin
GROWTH_MARGIN = 1.01
# PCG stops after this many steps without a new smallest residual
STAGNATION_PATIENCE = 10


# -- problem and preconditioner ------------------------------------------------

@dataclass(frozen=True, eq=False)
class Problem:
    """Discrete problem on a uniform grid: coefficient, preconditioner coefficient, load."""

    a: SeparableCoefficient
    a0: SeparableCoefficient
    f: SeparableFunction
    grid: UniformGrid
    lumped: bool = True

    @classmethod
    def build(cls, a, a0, f, n, lumped: bool = True) -> "Problem":
        return cls(a, a0, f, UniformGrid.of(n, a.d), lumped)

    @property
    def d(self) -> int:
        return self.a.d

    @cached_property
    def A(self) -> KroneckerMatrix:
        return assemble_kron_stiffness(self.a, self.grid, self.lumped)

    @cached_property
    def L0(self) -> KroneckerMatrix:
        return assemble_preconditioner(self.a0, self.grid, self.lumped)

    @cached_property
    def L0_consistent(self) -> KroneckerMatrix:
        """Preconditioner with consistent mass; its quadratic form is the continuous ||.||o^2."""
        return self.L0 if self.d == 1 else assemble_preconditioner(self.a0, self.grid, False)

    @cached_property
    def rhs(self) -> LowRankVector:
        return assemble_rhs(self.f, self.grid)

    @cached_property
    def ratio_bounds(self) -> tuple[float, float]:
        return ratio_bounds(self.a, self.a0)

    def q(self, rho: float | None = None) -> float:
        hm, hp = self.ratio_bounds
        return contraction_at(optimal_rho(hm, hp) if rho is None else rho, hm, hp)


@dataclass(frozen=True, eq=False)
class InverseOperator:
    """Application of L0^{-1}: exact (banded or fast diagonalization) or sinc-quadrature."""

    kind: Literal["exact", "sinc"]
    impl: object
    M: int | None = None

    def __call__(self, v: LowRankVector, policy: TruncationPolicy | None = None) -> LowRankVector:
        if self.kind == "sinc":
            return apply_inverse(self.impl, v, policy)
        return apply_exact_inverse(self.impl, v, policy)


def make_inverse(L0: KroneckerMatrix, kind: str = "exact", M: int = 36) -> InverseOperator:
    if kind == "exact":
        return InverseOperator("exact", exact_inverse(L0))
    if kind == "sinc":
        return InverseOperator("sinc", build_inverse(L0, M), M)
    raise ValidationError(f"unknown inverse kind {kind!r}")


# -- direct oracle ---------------------------------------------------------------

def dense_oracle_solve(A, f) -> np.ndarray:
    """Direct solve of A u = f.

    Dense arrays use a Cholesky/LU solve.  A KroneckerMatrix is expanded into
    a sparse matrix and factorized (tridiagonal 1D systems use a banded
    Cholesky), which keeps the oracle exact at sizes where a dense matrix would
    not fit in memory.
    """
    fv = f.full() if isinstance(f, LowRankVector) else np.asarray(f, dtype=float).ravel()
    if isinstance(A, KroneckerMatrix):
        if A.size > ORACLE_MAX:
            raise ValidationError(f"oracle limited to N <= {ORACLE_MAX}")
        if A.d == 1 and all(isinstance(t[0], TridiagonalMatrix) for t in A.terms):
            main = sum(t[0].main for t in A.terms)
            off = sum(t[0].off for t in A.terms)
            u = sla.solveh_banded(TridiagonalMatrix(main, off).banded(), fv)
        else:
            S = A.to_sparse().tocsc()
            u = spla.splu(S).solve(fv)
        resid = np.linalg.norm(A.matvec(u) - fv)
    else:
        Ad = np.asarray(A, dtype=float)
        if Ad.shape[0] > ORACLE_MAX:
            raise ValidationError(f"oracle limited to N <= {ORACLE_MAX}")
        try:
            u = sla.solve(Ad, fv)
        except sla.LinAlgError as exc:
            raise ValidationError(f"singular system: {exc}") from exc
        resid = np.linalg.norm(Ad @ u - fv)
    if not np.all(np.isfinite(u)):
        raise ValidationError("oracle solve produced non-finite values (singular matrix?)")
    if resid > 1e-10 * max(np.linalg.norm(fv), 1e-300):
        raise NumericalBreakdownError(f"oracle residual {resid:.3e} too large")
    return u


def oracle_for(problem: Problem) -> LowRankVector:
    u = dense_oracle_solve(problem.A, problem.rhs)
    if problem.d == 1:
        return LowRankVector.from_vector(u)
    return LowRankVector.from_matrix(u.reshape(problem.grid.sizes))


# -- fixed-point iteration --------------------------------------------------------

@dataclass(frozen=True)
class SolveConfig:
    rho: float | Literal["auto"] = "auto"
    max_iterations: int = 50
    stop_rule: Literal["residual", "gap"] = "residual"
    tol: float = 1e-8
    truncation: TruncationPolicy | None = None
    inverse: Literal["exact", "sinc"] = "exact"
    sinc_M: int = 36
    certificates: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        if self.stop_rule not in ("residual", "gap"):
            raise ValidationError("stop_rule must be 'residual' or 'gap'")
        if self.tol <= 0:
            raise ValidationError("tolerance must be positive")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")
        if self.rho != "auto" and not (isinstance(self.rho, (int, float)) and self.rho > 0):
            raise ValidationError("rho must be positive or 'auto'")
        if self.inverse == "sinc" and self.truncation is None:
            raise ValidationError("the sinc inverse multiplies the rank by 2M+1 per step; "
                                  "set a truncation policy")
        if self.stop_rule == "gap" and not self.certificates:
            raise ValidationError("the gap stop rule needs certificates enabled")


@dataclass
class IterationState:
    iterate: LowRankVector
    k: int
    rho: float
    policy: TruncationPolicy | None
    residuals: list[float] = field(default_factory=list)
    ratios: list[float | None] = field(default_factory=list)
    ranks: list[int] = field(default_factory=list)
    certificates: list = field(default_factory=list)
    iterates: list[LowRankVector] = field(default_factory=list)
    converged: bool = False


def fixed_point_step(u_prev: LowRankVector, rho: float, A: KroneckerMatrix,
                     inverse: Callable, f: LowRankVector,
                     policy: TruncationPolicy | None = None) -> LowRankVector:
    """u_prev - rho * L0^{-1}(A u_prev - f), truncated once at the end."""
    if rho <= 0:
        raise ValidationError("rho must be positive")
    w = inverse(kron_matvec(A, u_prev) - f)
    return truncate(u_prev - rho * w, policy)


def _resolve_rho(config: SolveConfig, problem: Problem) -> float:
    if config.rho == "auto":
        return optimal_rho(*problem.ratio_bounds)
    return float(config.rho)


def iterate(config: SolveConfig, problem: Problem, u0: LowRankVector | None = None,
            inverse: InverseOperator | None = None, certifier: Callable | None = None) -> IterationState:
    """Run the fixed-point iteration until the stop rule fires.

    Each pass computes the preconditioned residual w_k = L0^{-1}(A u_k - f);
    its energy norm is the recorded residual and ``u_k - rho*w_k`` is the
    tentative next iterate, which also feeds the certificate of ``u_k``.
    """
    rho = _resolve_rho(config, problem)
    inv = inverse or make_inverse(problem.L0, config.inverse, config.sinc_M)
    f, A, policy = problem.rhs, problem.A, config.truncation
    if config.certificates and certifier is None:
        from .error_bounds import step_certifier
        certifier = step_certifier(problem, rho)
    u = truncate(inv(f), policy) if u0 is None else u0
    ref = math.sqrt(max(inner(f, inv(f)), 0.0)) or 1.0
    state = IterationState(u, 0, rho, policy)
    streak = 0
    k = 0
    while True:
        r = kron_matvec(A, u) - f
        w = inv(r)
        res = math.sqrt(max(inner(r, w), 0.0))
        nxt = truncate(u - rho * w, policy)
        state.residuals.append(res)
        state.ranks.append(u.rank)
        if config.keep_iterates:
            state.iterates.append(u)
        if k == 0:
            state.ratios.append(None)
        else:
            prev = state.residuals[-2]
            ratio = res / prev if prev > 0 else 0.0
            state.ratios.append(ratio)
            streak = streak + 1 if ratio > GROWTH_MARGIN and res > ROUNDOFF_FLOOR * ref else 0
            if streak >= DIVERGENCE_STREAK:
                raise DivergenceError(
                    f"residual grew for {DIVERGENCE_STREAK} consecutive steps (last ratio {ratio:.4f})",
                    ratio)
        cert = None
        if certifier is not None:
            cert = certifier(u, nxt)
            state.certificates.append(cert)
        state.iterate, state.k = u, k
        if config.stop_rule == "residual":
            done = res <= config.tol * ref
        else:
            norm_u = energy_norm(u, problem.L0_consistent)
            done = cert.upper <= config.tol * max(norm_u, 1e-300)
        if done:
            state.converged = True
            return state
        if k >= config.max_iterations:
            return state
        u, k = nxt, k + 1


def error_sequence(problem: Problem, e0: LowRankVector, rho: float, steps: int,
                   inverse: InverseOperator | None = None,
                   norm_operator: KroneckerMatrix | None = None) -> np.ndarray:
    """Energy norms of e_k = e_{k-1} - rho L0^{-1} A e_{k-1}, k = 0..steps.

    The error of the affine iteration obeys this homogeneous recursion exactly,
    so feeding it e_0 = u_0 - u measures ||u_k - u||o without subtracting two
    nearly equal vectors at late steps.
    """
    inv = inverse or make_inverse(problem.L0)
    G = norm_operator or problem.L0
    out = [energy_norm(e0, G)]
    e = e0
    for _ in range(steps):
        e = e - rho * inv(kron_matvec(problem.A, e))
        out.append(energy_norm(e, G))
    return np.array(out)


def asymptotic_ratio(problem: Problem, rho: float | None = None, steps: int = 200,
                     tail: int = 10, seed: int = 0, inverse: InverseOperator | None = None) -> float:
    """Asymptotic error reduction factor of the iteration, by power iteration.

    Starts from a random error and renormalizes every step; returns the
    geometric mean of the last ``tail`` one-step ratios.
    """
    if problem.d != 1:
        raise ValidationError("asymptotic_ratio is implemented for 1D problems")
    rho = optimal_rho(*problem.ratio_bounds) if rho is None else rho
    inv = inverse or make_inverse(problem.L0)
    rng = np.random.default_rng(seed)
    e = LowRankVector.from_vector(rng.standard_normal(problem.grid.sizes[0]))
    e = e * (1.0 / energy_norm(e, problem.L0))
    logs = []
    for _ in range(steps):
        e = e - rho * inv(kron_matvec(problem.A, e))
        nrm = energy_norm(e, problem.L0)
        if nrm == 0:
            return 0.0
        logs.append(math.log(nrm))
        e = e * (1.0 / nrm)
    return float(math.exp(np.mean(logs[-tail:])))


@dataclass(frozen=True)
class ConvergenceRow:
    k: int
    error: float | None
    ratio: float | None
    envelope: float | None
    within_bound: bool | None


def convergence_report(state: IterationState, q_predicted: float, oracle: LowRankVector | None = None,
                       norm_operator: KroneckerMatrix | None = None, errors=None,
                       tolerance: float = 1e-8) -> list[ConvergenceRow]:
    """Per-step table of error, ratio and the q^k envelope.

    Oracle mode needs either ``errors`` (precomputed ||u_k - u||o) or the
    stored iterates together with ``oracle`` and ``norm_operator``.  Without
    an oracle only the residual ratios are tabulated.
    """
    if errors is None and oracle is not None:
        if not state.iterates:
            raise ValidationError("oracle mode needs keep_iterates=True")
        errors = [energy_norm(u - oracle, norm_operator) for u in state.iterates]
    rows = []
    if errors is None:
        for k, ratio in enumerate(state.ratios):
            rows.append(ConvergenceRow(k, None, ratio, None,
                                       None if ratio is None else ratio <= q_predicted + tolerance))
        return rows
    e0 = errors[0]
    for k, err in enumerate(errors):
        ratio = None if k == 0 or errors[k - 1] == 0 else err / errors[k - 1]
        env = e0 * q_predicted**k
        ok = None if ratio is None else ratio <= q_predicted + tolerance
        rows.append(ConvergenceRow(k, float(err), ratio, float(env), ok))
    return rows


# -- truncated PCG --------------------------------------------------------------

@dataclass
class PCGResult:
    solution: LowRankVector
    iterations: int
    converged: bool
    residuals: list[float]
    ranks: list[int]
    restarts: int
    best_iteration: int = 0
    stagnated: bool = False


def pcg_solve(A: KroneckerMatrix, f: LowRankVector, preconditioner: Callable, tol: float = 1e-6,
              policy: TruncationPolicy | None = None, max_iterations: int = 200,
              x0: LowRankVector | None = None, patience: int = STAGNATION_PATIENCE) -> PCGResult:
    """Preconditioned CG with truncation of iterate, residual and direction.

    The residual is recomputed from the truncated iterate every step and the
    direction update uses beta = -(z, A p)/(p, A p), which restores local
    A-conjugacy after truncation.  Stops when the preconditioned residual norm
    sqrt((r, B r)) drops below tol * sqrt((f, B f)).  A nonpositive curvature
    (p, A p) triggers one restart from the current iterate; a second one
    raises NumericalBreakdownError.

    Truncation puts a floor under the attainable residual, and below it the
    directions lose conjugacy and the residual drifts upward.  The iterate
    with the smallest residual is therefore the one returned, and the loop
    ends early once ``patience`` steps pass without improving on it.
    """
    if tol <= 0:
        raise ValidationError("tolerance must be positive")
    x = x0 if x0 is not None else LowRankVector.zeros(f.shape)
    Bf = preconditioner(f, policy)
    ref = math.sqrt(max(inner(f, Bf), 0.0))
    if ref == 0:
        return PCGResult(x, 0, True, [0.0], [x.rank], 0)

    def residual(x):
        r = truncate(f - kron_matvec(A, x), policy) if x.rank else f
        z = preconditioner(r, policy)
        return r, z

    r, z = residual(x)
    rz = inner(r, z)
    p = z
    history = [math.sqrt(max(rz, 0.0)) / ref]
    ranks = [x.rank]
    best, best_x = 0, x
    restarts = 0
    it = 0
    stagnated = False
    while history[best] > tol and it < max_iterations:
        Ap = kron_matvec(A, p)
        pAp = inner(p, Ap)
        if not pAp > 0:
            if restarts:
                raise NumericalBreakdownError(f"nonpositive curvature {pAp:.3e} after restart")
            restarts += 1
            r, z = residual(x)
            rz, p = inner(r, z), z
            continue
        alpha = rz / pAp
        x = truncate(x + alpha * p, policy)
        r, z = residual(x)
        rz = inner(r, z)
        beta = -inner(z, Ap) / pAp
        p = truncate(z + beta * p, policy)
        it += 1
        history.append(math.sqrt(max(rz, 0.0)) / ref)
        ranks.append(x.rank)
        if history[-1] < history[best]:
            best, best_x = it, x
        elif it - best >= patience:
            stagnated = True
            break
    return PCGResult(best_x, it, history[best] <= tol, history, ranks, restarts, best, stagnated)
