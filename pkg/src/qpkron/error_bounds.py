"""Guaranteed two-sided error certificates for iterates of the fixed-point map.

For an iterate ``v`` and an approximation ``vt`` of the exact step
``v_rho = T_rho v`` the certificate combines

* the computable displacement ``delta = ||v - vt||o``,
* a majorant ``M >= ||v_rho - vt||o`` built from any equilibrated flux ``y``,
* the contraction factor ``q`` of ``T_rho``,

into ``max(0, (delta - M)/(1 + q)) <= ||v - u||o <= (delta + M)/(1 - q)``.

Sign convention throughout: ``-div(a grad u) = f`` with weak form
``int a grad u . grad w = int f w``.  With ``eta = v - vt`` and
``tau = y - rho a grad v`` the equilibrated majorant is

    M^2 = int a0^{-1} |a0 grad eta + tau|^2,   div y = -rho f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .coefficients import SeparableFunction, UniformGrid
from .errors import NumericalBreakdownError, ValidationError
from .kron_fem import KroneckerMatrix, densify
from .lowrank import LowRankVector, energy_norm
from .quadrature import ElementQuadrature, quadrature_for

NEGATIVE_TOL = 1e-12
GRID_CERTIFIED = "grid-certified"


@dataclass(frozen=True)
class ErrorCertificate:
    delta: float
    majorant: float
    q: float
    lower: float
    upper: float
    label: str = GRID_CERTIFIED

    def to_dict(self) -> dict:
        return {"delta": self.delta, "majorant": self.majorant, "q": self.q,
                "lower": self.lower, "upper": self.upper, "label": self.label}


def ostrowski_bounds(delta: float, majorant: float, q: float) -> tuple[float, float]:
    """(max(0, (delta - M)/(1 + q)), (delta + M)/(1 - q))."""
    if not 0 <= q < 1:
        raise ValidationError(f"contraction factor q = {q} must lie in [0, 1)")
    if delta < 0 or majorant < 0:
        raise ValidationError("delta and majorant must be nonnegative")
    return max(0.0, (delta - majorant) / (1 + q)), (delta + majorant) / (1 - q)


def make_certificate(delta: float, majorant: float, q: float, label: str = GRID_CERTIFIED) -> ErrorCertificate:
    lo, hi = ostrowski_bounds(delta, majorant, q)
    return ErrorCertificate(float(delta), float(majorant), float(q), float(lo), float(hi), label)


def _checked_sqrt(value: float, scale: float, what: str) -> float:
    if value < -NEGATIVE_TOL * max(1.0, scale):
        raise NumericalBreakdownError(f"{what} came out negative: {value:.3e}")
    return math.sqrt(max(value, 0.0))


# -- abstract form ------------------------------------------------------------------

def majorant_general(eta: np.ndarray, tau: np.ndarray, L0, defect: np.ndarray | None = None,
                     lambda0_minus: float | None = None) -> float:
    """Majorant for a discrete operator setting.

    ``eta`` is a primal vector, ``tau`` and ``defect`` are dual vectors and
    ``L0`` the SPD preconditioner (dense array or KroneckerMatrix).  The
    quadratic part is ``(L0 eta + tau, eta + L0^{-1} tau)``; a nonzero
    equilibration defect adds ``||defect|| / sqrt(lambda0_minus)``.
    """
    L = densify(L0) if isinstance(L0, KroneckerMatrix) else np.asarray(L0, dtype=float)
    eta = np.asarray(eta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    cho = sla.cho_factor(L)
    quad = eta @ L @ eta + 2.0 * eta @ tau + tau @ sla.cho_solve(cho, tau)
    scale = abs(eta @ L @ eta) + abs(tau @ sla.cho_solve(cho, tau))
    value = _checked_sqrt(float(quad), scale, "majorant quadratic form")
    if defect is not None and np.any(defect):
        if lambda0_minus is None:
            lambda0_minus = float(sla.eigvalsh(L, subset_by_index=[0, 0])[0])
        value += float(np.linalg.norm(defect)) / math.sqrt(lambda0_minus)
    return value


# -- 1D functional majorant ----------------------------------------------------------

@dataclass(frozen=True)
class Majorant1D:
    """Value of the 1D majorant together with the integrals it is built from."""

    value: float
    squared: float
    mu_bar: float
    F: tuple[float, float, float, float, float]
    G: tuple[float, float, float, float]


def _sum_callable(fn: SeparableFunction):
    if fn.d != 1:
        raise ValidationError("expected a 1D function")
    return lambda x: sum(t[0].fn(x) for t in fn.terms)


def _quad_1d(n: int, *functions: SeparableFunction) -> ElementQuadrature:
    factors = [t[0] for fn in functions for t in fn.terms]
    return quadrature_for(n, *factors)


def majorant_1d(v: np.ndarray, v_tilde: np.ndarray, a: SeparableFunction, a0: SeparableFunction,
                f: SeparableFunction, rho: float, quad: ElementQuadrature | None = None) -> Majorant1D:
    """Equilibrated-flux majorant for d = 1 with y = rho (g + mu_bar), g = -int_0^x f.

    The squared value is F3 - 2 rho G2 + 2 rho F5 + rho^2 (F4 - 2 G3 + G4),
    with mu_bar = (G1 - F2)/F1 minimizing over the free constant.
    """
    v = np.asarray(v, dtype=float)
    vt = np.asarray(v_tilde, dtype=float)
    if v.shape != vt.shape or v.ndim != 1:
        raise ValidationError("v and v_tilde must be nodal vectors of equal length")
    quad = quad or _quad_1d(v.size, a, a0, f)
    x, w = quad.x, quad.w
    fa, fa0, ff = _sum_callable(a)(x), _sum_callable(a0)(x), _sum_callable(f)
    g = -quad.antiderivative(ff)
    dv = quad.gradient(v)
    eta = v - vt
    deta = quad.gradient(eta)
    inv0 = 1.0 / fa0
    F1 = w @ inv0
    F2 = w @ (inv0 * g)
    F3 = w @ (fa0 * deta**2)
    G1 = w @ (inv0 * fa * dv)
    mu = (G1 - F2) / F1
    F4 = w @ (inv0 * (mu + g) ** 2)
    F5 = w @ (ff(x) * quad.values(eta))
    G2 = w @ (fa * dv * deta)
    G3 = w @ ((mu + g) * inv0 * fa * dv)
    G4 = w @ (inv0 * fa**2 * dv**2)
    sq = F3 - 2 * rho * G2 + 2 * rho * F5 + rho**2 * (F4 - 2 * G3 + G4)
    scale = F3 + rho**2 * (F4 + G4)
    val = _checked_sqrt(float(sq), float(scale), "majorant I^2")
    return Majorant1D(val, float(sq), float(mu), (F1, F2, F3, F4, F5), (G1, G2, G3, G4))


def exact_step_derivative_1d(v: np.ndarray, a: SeparableFunction, a0: SeparableFunction,
                             f: SeparableFunction, rho: float, quad: ElementQuadrature) -> np.ndarray:
    """Derivative of the exact step v_rho = T_rho v at the quadrature points.

    In 1D the auxiliary problem integrates once:
    a0 (v_rho - v)' = rho (g + mu_bar - a v').  The corresponding flux
    a0 (v_rho - v)' + rho a v' equals rho (g + mu_bar), the choice used by
    :func:`majorant_1d`.
    """
    x = quad.x
    fa, fa0 = _sum_callable(a)(x), _sum_callable(a0)(x)
    g = -quad.antiderivative(_sum_callable(f))
    dv = quad.gradient(v)
    mu = (quad.w @ ((fa * dv - g) / fa0)) / (quad.w @ (1.0 / fa0))
    return dv + rho * (g + mu - fa * dv) / fa0


def flux_majorant_1d(v: np.ndarray, v_tilde: np.ndarray, y: np.ndarray, a: SeparableFunction,
                     a0: SeparableFunction, rho: float, quad: ElementQuadrature) -> float:
    """sqrt(int a0^{-1} (a0 eta' + y - rho a v')^2) for flux values ``y`` at the quadrature points.

    Valid as a bound only for equilibrated ``y`` (-y' = rho f).
    """
    x, w = quad.x, quad.w
    fa, fa0 = _sum_callable(a)(x), _sum_callable(a0)(x)
    e = fa0 * quad.gradient(np.asarray(v) - np.asarray(v_tilde)) + y - rho * fa * quad.gradient(v)
    return math.sqrt(float(w @ (e * e / fa0)))


# -- 2D flux majorant ----------------------------------------------------------------

def _ramp(t: np.ndarray) -> np.ndarray:
    """Antiderivative of the unit hat max(0, 1 - |t|) from -infinity."""
    t = np.clip(t, -1.0, 1.0)
    return np.where(t < 0, 0.5 * (t + 1.0) ** 2, 1.0 - 0.5 * (1.0 - t) ** 2)


def flux_basis_values(m: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the univariate flux basis at points ``x``.

    Column 0 is the constant 1; columns 1..m+2 are antiderivatives
    int_0^x psi_j of the P1 hats psi_j on the grid j/(m+1), j = 0..m+1
    (boundary half-hats included).  Spans all C^1 piecewise quadratics on that grid.
    """
    if m < 0:
        raise ValidationError("flux grid size must be >= 0")
    H = 1.0 / (m + 1)
    z = np.arange(m + 2) * H
    t = (x[:, None] - z[None, :]) / H
    W = H * (_ramp(t) - _ramp(-z / H)[None, :])
    dW = np.maximum(0.0, 1.0 - np.abs(t))
    ones = np.ones((x.size, 1))
    return np.hstack([ones, W]), np.hstack([np.zeros((x.size, 1)), dW])


def flux_nodes(m: int) -> np.ndarray:
    return np.arange(m + 2) / (m + 1)


@dataclass(frozen=True, eq=False)
class FluxAxis:
    """Univariate matrices of one axis.

    ``P = int phi' W``, ``R = int phi W'`` (FE hats against flux functions),
    hatted versions weighted by each coefficient factor, and Gram matrices
    ``Wm = int W W``, ``D = int W' W'``.
    """

    quad: ElementQuadrature
    phi: np.ndarray
    dphi: np.ndarray
    W: np.ndarray
    dW: np.ndarray
    Wm: np.ndarray
    D: np.ndarray
    P: np.ndarray
    R: np.ndarray
    P_hat: tuple[np.ndarray, ...]
    R_hat: tuple[np.ndarray, ...]
    a_vals: tuple[np.ndarray, ...]


def _flux_axis(n: int, m: int, a_factors, other_factors) -> FluxAxis:
    quad = quadrature_for(n, *a_factors, *other_factors, extra_edges=flux_nodes(m))
    phi, dphi = quad.basis_matrices()
    W, dW = flux_basis_values(m, quad.x)
    w = quad.w[:, None]
    a_vals = tuple(fac.fn(quad.x) for fac in a_factors)
    return FluxAxis(
        quad, phi, dphi, W, dW,
        W.T @ (w * W), dW.T @ (w * dW),
        dphi.T @ (w * W), phi.T @ (w * dW),
        tuple(dphi.T @ (w * av[:, None] * W) for av in a_vals),
        tuple(phi.T @ (w * av[:, None] * dW) for av in a_vals),
        a_vals)


@dataclass(frozen=True, eq=False)
class FluxBasis2D:
    axes: tuple[FluxAxis, FluxAxis]
    sizes: tuple[int, int]

    @property
    def Y(self) -> np.ndarray:
        """Gram matrix of the curl fields, (k,l) flattened C-order, (0,0) removed."""
        x1, x2 = self.axes
        full = np.kron(x1.Wm, x2.D) + np.kron(x1.D, x2.Wm)
        return full[1:, 1:]

    def divergence_residual(self) -> float:
        """max |int Upsilon_kl . grad(phi_i phi_j)| over all pairs (should be 0)."""
        x1, x2 = self.axes
        T = np.einsum("is,jt->ijst", x1.P, x2.R) - np.einsum("is,jt->ijst", x1.R, x2.P)
        return float(np.max(np.abs(T)))


def flux_basis_2d(a: SeparableFunction, f: SeparableFunction, grid, m: Sequence[int]) -> FluxBasis2D:
    g = UniformGrid.of(grid, 2)
    m1, m2 = int(m[0]), int(m[1])
    ax1 = _flux_axis(g.sizes[0], m1, a.factors(0), f.factors(0))
    ax2 = _flux_axis(g.sizes[1], m2, a.factors(1), f.factors(1))
    return FluxBasis2D((ax1, ax2), (m1, m2))


@dataclass(frozen=True)
class Majorant2D:
    value: float
    sigma: np.ndarray
    flux_sizes: tuple[int, int]


def _constant_value(a0: SeparableFunction) -> float:
    if a0.rank != 1 or any(fac.kind != "constant" for fac in a0.terms[0]):
        raise ValidationError("2D flux majorant needs a constant preconditioner coefficient")
    return float(np.prod([fac.params["value"] for fac in a0.terms[0]]))


def _factors(v: LowRankVector) -> tuple[np.ndarray, np.ndarray]:
    if v.d != 2:
        raise ValidationError("2D majorant expects 2D LowRankVectors")
    return v.factors


def majorant_2d_flux(v: LowRankVector, v_tilde: LowRankVector, a: SeparableFunction,
                     a0: SeparableFunction, f: SeparableFunction, rho: float,
                     flux_sizes: Sequence[int] = (15, 15),
                     basis: FluxBasis2D | None = None) -> Majorant2D:
    """Galerkin-optimal divergence-constrained flux and the resulting majorant.

    y = Upsilon_0 + sum sigma_kl curl(W_k W_l), with Upsilon_0 = (F1(x1) * (-rho f2(x2)), 0)
    and F1 the antiderivative of f1, so div y = -rho f.  sigma solves
    Y sigma = (rho a grad v - a0 grad eta - Upsilon_0, Upsilon_st).  A separable
    coefficient and load of any rank are accepted (terms are summed); the
    preconditioner coefficient must be constant.
    """
    c0 = _constant_value(a0)
    if v.shape != v_tilde.shape:
        raise ValidationError("v and v_tilde differ in shape")
    B = basis or flux_basis_2d(a, f, v.shape, flux_sizes)
    x1, x2 = B.axes
    U, V = _factors(v)
    Ue, Ve = _factors(v - v_tilde)
    mb1, mb2 = x1.W.shape[1], x2.W.shape[1]

    # particular field Upsilon_0 = (sum_r W0_r(x1) Z0_r(x2), 0)
    W0 = np.column_stack([x1.quad.antiderivative(t[0].fn) for t in f.terms])
    Z0 = np.column_stack([-rho * t[1].fn(x2.quad.x) for t in f.terms])
    g1 = x1.W.T @ (x1.quad.w[:, None] * W0)
    g2 = x2.dW.T @ (x2.quad.w[:, None] * Z0)

    rhs = -(g1 @ g2.T)
    rhs -= c0 * ((x1.P.T @ Ue) @ (x2.R.T @ Ve).T - (x1.R.T @ Ue) @ (x2.P.T @ Ve).T)
    for s in range(a.rank):
        rhs += rho * ((x1.P_hat[s].T @ U) @ (x2.R_hat[s].T @ V).T
                      - (x1.R_hat[s].T @ U) @ (x2.P_hat[s].T @ V).T)
    Y = B.Y
    try:
        cho = sla.cho_factor(Y)
    except sla.LinAlgError:
        lam, vec = sla.eigh(Y)
        idx = int(np.argmax(np.abs(vec[:, 0]))) + 1
        raise ValidationError(
            f"flux Gram matrix is singular; basis pair (k, l) = {divmod(idx, mb2)} is dependent")
    sig = np.concatenate([[0.0], sla.cho_solve(cho, rhs.ravel()[1:])]).reshape(mb1, mb2)

    # residual field E = a0 grad eta + y - rho a grad v on the tensor quadrature grid
    e1 = c0 * (x1.dphi @ Ue) @ (x2.phi @ Ve).T + W0 @ Z0.T + (x1.W @ sig) @ x2.dW.T
    e2 = c0 * (x1.phi @ Ue) @ (x2.dphi @ Ve).T - (x1.dW @ sig) @ x2.W.T
    for s in range(a.rank):
        A1, A2 = x1.a_vals[s][:, None], x2.a_vals[s][:, None]
        e1 -= rho * (A1 * (x1.dphi @ U)) @ (A2 * (x2.phi @ V)).T
        e2 -= rho * (A1 * (x1.phi @ U)) @ (A2 * (x2.dphi @ V)).T
    sq = x1.quad.w @ (e1 * e1 + e2 * e2) @ x2.quad.w / c0
    return Majorant2D(math.sqrt(max(float(sq), 0.0)), sig, (int(flux_sizes[0]), int(flux_sizes[1])))


# -- certificates along the iteration -------------------------------------------------

def certificate_for_step(problem, v: LowRankVector, v_next: LowRankVector, rho: float,
                         q: float | None = None, flux_sizes: Sequence[int] | None = None,
                         basis: FluxBasis2D | None = None) -> ErrorCertificate:
    """Certificate for ``v`` using the next iterate as the approximate exact step.

    q defaults to the contraction factor at ``rho`` computed from probe-grid
    extremes of a/a0, hence the "grid-certified" label.
    """
    q = problem.q(rho) if q is None else q
    eta = v - v_next
    delta = energy_norm(eta, problem.L0_consistent)
    if problem.d == 1:
        M = majorant_1d(v.full(), v_next.full(), problem.a, problem.a0, problem.f, rho).value
    else:
        sizes = flux_sizes or tuple(min(n, 15) for n in problem.grid.sizes)
        M = majorant_2d_flux(v, v_next, problem.a, problem.a0, problem.f, rho, sizes, basis).value
    return make_certificate(delta, M, q)


def step_certifier(problem, rho: float, q: float | None = None,
                   flux_sizes: Sequence[int] | None = None):
    """Callable (v, v_next) -> ErrorCertificate with per-problem setup done once."""
    q = problem.q(rho) if q is None else q
    basis = None
    if problem.d == 2:
        _constant_value(problem.a0)
        sizes = flux_sizes or tuple(min(n, 15) for n in problem.grid.sizes)
        basis = flux_basis_2d(problem.a, problem.f, problem.grid, sizes)
        flux_sizes = sizes

    def certify(v, v_next):
        return certificate_for_step(problem, v, v_next, rho, q, flux_sizes, basis)

    return certify
