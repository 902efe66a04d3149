"""Contraction factors, relaxation parameters and simple preconditioner choices.

Everything here works with the pointwise ratio ``h(x) = a(x)/a0(x)`` sampled
on a probe grid.  Its extremes give the optimal relaxation parameter and the
contraction factor of the preconditioned iteration; cruder global bounds on
``a`` and ``a0`` separately give a coarser estimate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .coefficients import (PROBE_POINTS, SeparableCoefficient, SeparableFunction,
                           UnivariateFactor, coeff_bounds, coefficient_1d, make_piecewise,
                           periodic_two_level, probe_grid, sum_factors)
from .errors import ValidationError
from .quadrature import gauss_legendre


@dataclass(frozen=True)
class SpectralReport:
    h_minus: float
    h_plus: float
    rho_star: float
    q: float
    lambda_minus: float
    lambda_plus: float
    lambda0_minus: float
    lambda0_plus: float
    coarse_rho: float
    q_hat: float
    c1: float
    c2: float
    mu_minus: float | None = None
    mu_plus: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _joint_axes(a: SeparableFunction, a0: SeparableFunction, min_points: int):
    if a.d != a0.d:
        raise ValidationError("coefficient and preconditioner coefficient differ in dimension")
    return [probe_grid(a.factors(ax) + a0.factors(ax), min_points) for ax in range(a.d)]


def ratio_bounds(a: SeparableFunction, a0: SeparableFunction,
                 min_points: int | None = None) -> tuple[float, float]:
    """Min and max of a/a0 over a probe grid resolving both coefficients."""
    if min_points is None:
        min_points = PROBE_POINTS if a.d == 1 else 257
    axes = _joint_axes(a, a0, min_points)
    den = a0.on_grid(*axes)
    if np.min(den) <= 0:
        raise ValidationError("preconditioner coefficient a0 is not positive on the probe grid")
    ratio = a.on_grid(*axes) / den
    return float(np.min(ratio)), float(np.max(ratio))


def optimal_rho(h_minus: float, h_plus: float) -> float:
    if h_minus <= 0 or h_plus <= 0:
        raise ValidationError("ratio bounds must be positive")
    return 2.0 / (h_minus + h_plus)


def contraction_factor(h_minus: float, h_plus: float) -> float:
    """q = (h+ - h-)/(h+ + h-), the contraction factor at the optimal rho."""
    if not 0 < h_minus <= h_plus:
        raise ValidationError("need 0 < h_minus <= h_plus")
    return (h_plus - h_minus) / (h_plus + h_minus)


def contraction_at(rho: float, h_minus: float, h_plus: float) -> float:
    """max |1 - rho*h| over [h_minus, h_plus], the factor for a non-optimal rho."""
    return max(abs(1.0 - rho * h_minus), abs(1.0 - rho * h_plus))


def coarse_contraction(lambda_minus: float, lambda_plus: float,
                       lambda0_minus: float, lambda0_plus: float) -> tuple[float, float]:
    """(rho, q_hat) from separate bounds on a and a0.

    c1 = lambda-/lambda0+, c2 = lambda+/lambda0-, rho = c1/c2**2 and
    q_hat**2 = 1 - (c1/c2)**2.
    """
    vals = (lambda_minus, lambda_plus, lambda0_minus, lambda0_plus)
    if min(vals) <= 0:
        raise ValidationError("all spectral bounds must be positive")
    if lambda_minus > lambda_plus or lambda0_minus > lambda0_plus:
        raise ValidationError("lower bounds must not exceed upper bounds")
    c1 = lambda_minus / lambda0_plus
    c2 = lambda_plus / lambda0_minus
    return c1 / c2**2, math.sqrt(max(0.0, 1.0 - (c1 / c2) ** 2))


def spectral_constants(A: np.ndarray, L0: np.ndarray) -> tuple[float, float]:
    """Extreme generalized eigenvalues of A y = mu L0 y (small dense matrices)."""
    mu = sla.eigh(np.asarray(A), np.asarray(L0), eigvals_only=True)
    return float(mu[0]), float(mu[-1])


def spectral_report(a: SeparableFunction, a0: SeparableFunction, grid=None,
                    min_points: int | None = None, eig_limit: int = 4096) -> SpectralReport:
    """Collect ratio bounds, rho*, q and the coarse estimate.

    c1 = lambda-/lambda0+ and c2 = lambda+/lambda0- are the coarse equivalence
    constants.  When ``grid`` is given and small enough, the sharp discrete
    constants mu-/mu+ come from a dense generalized eigensolve of the
    assembled stiffness and preconditioner.
    """
    h_minus, h_plus = ratio_bounds(a, a0, min_points)
    lm, lp = coeff_bounds(a)
    l0m, l0p = coeff_bounds(a0)
    coarse_rho, q_hat = coarse_contraction(lm, lp, l0m, l0p)
    mu = (None, None)
    if grid is not None:
        from .kron_fem import assemble_kron_stiffness, assemble_preconditioner, densify
        A = assemble_kron_stiffness(a, grid)
        if A.size <= eig_limit:
            mu = spectral_constants(densify(A), densify(assemble_preconditioner(a0, grid)))
    return SpectralReport(h_minus, h_plus, optimal_rho(h_minus, h_plus),
                          contraction_factor(h_minus, h_plus), lm, lp, l0m, l0p,
                          coarse_rho, q_hat, lm / l0p, lp / l0m, *mu)


# -- piecewise constant preconditioners ------------------------------------------

@dataclass(frozen=True)
class PiecewiseOptimum:
    """Optimal constants on a 1D partition and the resulting contraction factor.

    ``xi`` is the interval of optimal ratios c2/c1 (two subdomains only);
    ``ratio`` is the value actually used there.
    """

    breakpoints: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    constants: tuple[float, ...]
    q: float
    q_checked: float
    xi: tuple[float, float] | None = None
    ratio: float | None = None

    def preconditioner(self) -> SeparableCoefficient:
        return coefficient_1d(make_piecewise(self.breakpoints, self.constants))


def _interval_samples(factor: UnivariateFactor, lo: float, hi: float,
                      min_points: int = PROBE_POINTS) -> np.ndarray:
    pts = probe_grid([factor], min_points)
    inner = pts[(pts > lo) & (pts < hi)]
    # endpoints nudged inward so jumps at the partition are attributed correctly
    eps = 1e-9
    edge = np.array([lo + eps if lo > 0 else 0.0, hi - eps if hi < 1 else 1.0])
    return np.concatenate([inner, edge, np.linspace(lo, hi, 65)[1:-1]])


def subdomain_bounds(a: UnivariateFactor, breakpoints: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Per-subdomain (min, max) of a 1D factor on the probe grid."""
    b = [0.0, *breakpoints, 1.0]
    if any(hi <= lo for lo, hi in zip(b[:-1], b[1:])):
        raise ValidationError("partition has an empty subdomain")
    lows, highs = [], []
    for lo, hi in zip(b[:-1], b[1:]):
        vals = a(_interval_samples(a, lo, hi))
        lows.append(float(np.min(vals)))
        highs.append(float(np.max(vals)))
    return np.array(lows), np.array(highs)


def piecewise_quality(lower: Sequence[float], upper: Sequence[float],
                      constants: Sequence[float]) -> float:
    """Contraction factor q for constants c_i given subdomain bounds.

    h- = min a-_i/c_i and h+ = max a+_i/c_i, then q = (h+ - h-)/(h+ + h-).
    """
    c = np.asarray(constants, dtype=float)
    if np.any(c <= 0):
        raise ValidationError("piecewise constants must be positive")
    hm = float(np.min(np.asarray(lower) / c))
    hp = float(np.max(np.asarray(upper) / c))
    return contraction_factor(hm, hp)


def optimal_constants_from_bounds(lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    """Maximizer of min(a-_i/c_i)/max(a+_i/c_i), normalized so sum(1/c_i) = 1.

    The ratio is bounded by min_i a-_i/a+_i for any choice of constants, and
    c_i = sqrt(a-_i a+_i) attains that bound.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.size == 0 or np.any(lo <= 0) or np.any(hi < lo):
        raise ValidationError("subdomain bounds must be positive and ordered")
    c = np.sqrt(lo * hi)
    return c * np.sum(1.0 / c)


def xi_interval(lower: Sequence[float], upper: Sequence[float]) -> tuple[float, float]:
    r_lo = float(lower[1] / lower[0])
    r_hi = float(upper[1] / upper[0])
    return min(r_lo, r_hi), max(r_lo, r_hi)


def optimal_piecewise_constants(a, breakpoints: Sequence[float] = ()) -> PiecewiseOptimum:
    """Best piecewise constant a0 on the partition given by ``breakpoints``.

    ``a`` may be a UnivariateFactor or a 1D SeparableCoefficient.
    """
    fac = _as_factor(a)
    bps = tuple(float(b) for b in breakpoints)
    lower, upper = subdomain_bounds(fac, bps)
    c = optimal_constants_from_bounds(lower, upper)
    xi = ratio = None
    if c.size == 2:
        xi = xi_interval(lower, upper)
        ratio = math.sqrt(xi[0] * xi[1])
        c = np.array([1.0, ratio])
        c = c * np.sum(1.0 / c)
    q = piecewise_quality(lower, upper, c)
    a0 = coefficient_1d(make_piecewise(bps, c))
    q_checked = contraction_factor(*ratio_bounds(coefficient_1d(fac), a0))
    return PiecewiseOptimum(bps, tuple(lower.tolist()), tuple(upper.tolist()), tuple(c.tolist()), q, q_checked,
                            xi, ratio)


def _as_factor(a) -> UnivariateFactor:
    if isinstance(a, UnivariateFactor):
        return a
    if isinstance(a, SeparableFunction) and a.d == 1:
        return a.terms[0][0] if a.rank == 1 else sum_factors(*a.factors(0))
    raise ValidationError("expected a univariate factor or a 1D coefficient")


# -- homogenization ------------------------------------------------------------

HARMONIC_POINTS_PER_PERIOD = 32


def homogenized_coefficient(a: UnivariateFactor, interval: tuple[float, float] = (0.0, 1.0)) -> float:
    """Harmonic mean of ``a`` over ``interval``.

    Composite Gauss rule on cells split at the factor's kinks, with at least
    32 cells per oscillation period.
    """
    lo, hi = map(float, interval)
    if not 0 <= lo < hi <= 1:
        raise ValidationError("interval must satisfy 0 <= lo < hi <= 1")
    cells = 256
    if a.period:
        cells = max(cells, math.ceil(HARMONIC_POINTS_PER_PERIOD * (hi - lo) / a.period))
    edges = np.linspace(lo, hi, cells + 1)
    k = np.asarray([p for p in a.kinks if lo < p < hi])
    edges = np.unique(np.concatenate([edges, k]))
    t, w = gauss_legendre(5)
    left, width = edges[:-1], np.diff(edges)
    x = (left[:, None] + width[:, None] * t).ravel()
    wx = (width[:, None] * w).ravel()
    vals = a(x)
    if np.any(vals <= 0):
        raise ValidationError("harmonic mean needs a positive coefficient")
    return float((hi - lo) / np.sum(wx / vals))


@dataclass(frozen=True)
class HomogenizationComparison:
    beta: float
    kappa: tuple[float, float]
    levels: tuple[tuple[float, float], tuple[float, float]]
    a_hat: tuple[float, float]
    hat_ratio: float
    zeta: tuple[float, float]
    xi: tuple[float, float]
    q_homogenized: float
    q_optimal: float

    @property
    def zeta_contains_xi(self) -> bool:
        return self.zeta[0] <= self.xi[0] and self.zeta[1] >= self.xi[1]

    @property
    def hat_ratio_inside_xi(self) -> bool:
        return self.xi[0] <= self.hat_ratio <= self.xi[1]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["zeta_contains_xi"] = self.zeta_contains_xi
        out["hat_ratio_inside_xi"] = self.hat_ratio_inside_xi
        return out


def two_subdomain_coefficient(beta: float, kappa1: float, kappa2: float,
                              levels1: tuple[float, float], levels2: tuple[float, float],
                              cells1: int = 8, cells2: int = 8) -> UnivariateFactor:
    """Periodic two-level coefficient on (0, beta) and on (beta, 1).

    ``levels`` are (low, high); the high value fills the fraction ``kappa``.
    """
    if not 0 < beta < 1:
        raise ValidationError("beta must lie in (0, 1)")
    f1 = periodic_two_level(levels1[0], levels1[1], kappa1, cells1, 0.0, beta)
    f2 = periodic_two_level(levels2[0], levels2[1], kappa2, cells2, beta, 1.0)
    return sum_factors(f1, f2)


def compare_homogenized_vs_optimal(beta: float, kappa1: float, kappa2: float,
                                   levels1: tuple[float, float], levels2: tuple[float, float],
                                   cells1: int = 8, cells2: int = 8) -> HomogenizationComparison:
    """Contraction factor of the homogenized preconditioner against the optimal one.

    The homogenized ratio a2^/a1^ always lies in (zeta1, zeta2) with
    zeta1 = a2-/a1+ and zeta2 = a2+/a1-, which contains the optimal interval.
    """
    a = two_subdomain_coefficient(beta, kappa1, kappa2, levels1, levels2, cells1, cells2)
    a_hat = (homogenized_coefficient(a, (0.0, beta)), homogenized_coefficient(a, (beta, 1.0)))
    lower, upper = subdomain_bounds(a, (beta,))
    xi = xi_interval(lower, upper)
    zeta = (float(lower[1] / upper[0]), float(upper[1] / lower[0]))
    coeff = coefficient_1d(a)
    q_hom = contraction_factor(*ratio_bounds(coeff, coefficient_1d(make_piecewise((beta,), a_hat))))
    opt = optimal_piecewise_constants(a, (beta,))
    return HomogenizationComparison(beta, (kappa1, kappa2), (tuple(levels1), tuple(levels2)),
                                    a_hat, a_hat[1] / a_hat[0], zeta, xi, q_hom, opt.q_checked)


# a shipped instance where the homogenized ratio misses the optimal interval
NON_CONTAINMENT_INSTANCE = dict(beta=0.5, kappa1=0.9, kappa2=0.1,
                                levels1=(1.0, 3.0), levels2=(2.0, 4.0))
CONTAINMENT_INSTANCE = dict(beta=0.5, kappa1=0.5, kappa2=0.5,
                            levels1=(1.0, 3.0), levels2=(2.0, 4.0))


def find_non_containment(betas: Sequence[float] = (0.3, 0.5, 0.7),
                         kappas: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
                         level_sets: Sequence[tuple] = (((1.0, 3.0), (2.0, 4.0)),
                                                        ((1.0, 2.0), (1.5, 6.0)))):
    """Scan (beta, kappa1, kappa2, levels) for instances with q_hom > q_opt."""
    found = []
    for beta in betas:
        for k1 in kappas:
            for k2 in kappas:
                for l1, l2 in level_sets:
                    rep = compare_homogenized_vs_optimal(beta, k1, k2, l1, l2)
                    if rep.q_homogenized > rep.q_optimal + 1e-12:
                        found.append(rep)
    return found
