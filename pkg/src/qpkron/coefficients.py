"""Separable quasi-periodic coefficients and right-hand sides on [0, 1]^d.

A coefficient is a short sum of products of univariate factors,

    a(x) = sum_s  a_1^(s)(x_1) * ... * a_d^(s)(x_d),

with d in {1, 2}.  Factors are callables that also carry the information the
quadrature and probe grids need: kink locations, known extremal points and
the shortest oscillation period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ValidationError

PROBE_POINTS = 1025
PROBE_PER_PERIOD = 16
_KINK_OFFSET = 1e-9


@dataclass(frozen=True, eq=False)
class UnivariateFactor:
    """A function on [0, 1] together with hints for quadrature and probing.

    Attributes:
        kind: Generator name ("constant", "piecewise", "bumps", ...).
        params: The numeric parameters used to build it (for config echo).
        fn: Vectorized evaluator.
        kinks: Points where the factor is not smooth (jumps or polynomial
            breakpoints). Quadrature splits elements there.
        extrema: Points where local extrema are known to occur.
        period: Shortest oscillation length, or None for non-oscillatory factors.
    """

    kind: str
    params: dict
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    kinks: tuple[float, ...] = ()
    extrema: tuple[float, ...] = ()
    period: float | None = None

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
            raise DomainError(f"{self.kind} factor evaluated outside [0, 1]")
        out = np.asarray(self.fn(np.clip(arr, 0.0, 1.0)), dtype=float)
        return np.broadcast_to(out, arr.shape).copy() if out.shape != arr.shape else out

    def probe_points(self, min_points: int = PROBE_POINTS) -> np.ndarray:
        return probe_grid([self], min_points)


def probe_grid(factors: Sequence[UnivariateFactor], min_points: int = PROBE_POINTS) -> np.ndarray:
    """Sorted sample points resolving every factor's period, kinks and extrema.

    Jumps are sampled on both sides so piecewise constant levels are all seen.
    """
    periods = [f.period for f in factors if f.period]
    count = min_points
    if periods:
        count = max(count, math.ceil(PROBE_PER_PERIOD / min(periods)) + 1)
    pts = [np.linspace(0.0, 1.0, count)]
    for f in factors:
        k = np.asarray(f.kinks, dtype=float)
        if k.size:
            pts.append(np.clip(np.concatenate([k - _KINK_OFFSET, k + _KINK_OFFSET]), 0.0, 1.0))
        if f.extrema:
            pts.append(np.asarray(f.extrema, dtype=float))
    return np.unique(np.concatenate(pts))


# -- univariate generators ----------------------------------------------------

def constant(value: float) -> UnivariateFactor:
    value = float(value)
    return UnivariateFactor("constant", {"value": value}, lambda x: np.full_like(x, value))


def closed_form(fn: Callable[[np.ndarray], np.ndarray], *, name: str = "closed-form",
                kinks: Sequence[float] = (), extrema: Sequence[float] = (),
                period: float | None = None, **params) -> UnivariateFactor:
    return UnivariateFactor(name, dict(params), fn, tuple(kinks), tuple(extrema), period)


def sine(omega: float, phase: float = 0.0) -> UnivariateFactor:
    """x -> sin(omega*x + phase)."""
    period = 2 * math.pi / abs(omega) if omega else None
    return closed_form(lambda x: np.sin(omega * x + phase), name="sin",
                       period=period, omega=float(omega), phase=float(phase))


def polynomial(coefficients: Sequence[float]) -> UnivariateFactor:
    """Polynomial with coefficients in increasing degree."""
    c = np.asarray(coefficients, dtype=float)
    return closed_form(lambda x: np.polynomial.polynomial.polyval(x, c),
                       name="polynomial", coefficients=c.tolist())


def make_piecewise(breakpoints: Sequence[float], values: Sequence[float]) -> UnivariateFactor:
    """Piecewise constant factor; ``values[i]`` holds on [b_{i-1}, b_i)."""
    b = np.asarray(breakpoints, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.size != b.size + 1:
        raise ValidationError("piecewise factor needs len(values) == len(breakpoints) + 1")
    if b.size and (np.any(np.diff(b) <= 0) or b[0] <= 0 or b[-1] >= 1):
        raise ValidationError("breakpoints must be strictly increasing inside (0, 1)")
    if np.any(v <= 0):
        raise ValidationError("piecewise coefficient levels must be positive")
    return UnivariateFactor("piecewise", {"breakpoints": b.tolist(), "values": v.tolist()},
                            lambda x: v[np.searchsorted(b, x, side="right")], tuple(b.tolist()))


def periodic_two_level(low: float, high: float, kappa: float, cells: int,
                       start: float = 0.0, stop: float = 1.0) -> UnivariateFactor:
    """Periodic step function on [start, stop] with ``cells`` periods.

    In every period the value ``high`` occupies the leading fraction ``kappa``
    and ``low`` the rest, so the measure of {a = high} is kappa*(stop-start).
    Outside [start, stop] the factor is zero; combine with other factors by
    summation to build multi-subdomain coefficients.
    """
    if not 0 < kappa < 1:
        raise ValidationError("kappa must lie in (0, 1)")
    if cells < 1:
        raise ValidationError("cells must be >= 1")
    length = stop - start
    per = length / cells
    kinks = [start + j * per for j in range(cells + 1)] + \
            [start + (j + kappa) * per for j in range(cells)]

    def fn(x):
        t = (x - start) / per
        frac = t - np.floor(t)
        out = np.where(frac < kappa, high, low)
        inside = (x >= start) & (x < stop) if stop < 1 else (x >= start) & (x <= stop)
        return np.where(inside, out, 0.0)

    return UnivariateFactor("two-level", {"low": low, "high": high, "kappa": kappa,
                                          "cells": cells, "start": start, "stop": stop},
                            fn, tuple(sorted(set(kinks))), period=per)


def bump_factor(cells: int, height: float = 1.0, support_fraction: float = 0.5) -> UnivariateFactor:
    """``cells`` equally spaced C^2 bumps ``height*(1-t^2)^3`` on [0, 1].

    Each bump is centered in its cell and supported on a fraction
    ``support_fraction`` of the cell width; off the supports the factor is 0.
    """
    if cells < 1:
        raise ValidationError("number of cells must be >= 1")
    if height <= 0:
        raise ValidationError("bump height must be positive")
    if not 0 < support_fraction < 1:
        raise ValidationError("support_fraction must lie in (0, 1)")
    width = 1.0 / cells
    half = 0.5 * support_fraction * width
    centers = (np.arange(cells) + 0.5) * width

    def fn(x):
        j = np.clip(np.floor(x / width), 0, cells - 1)
        t = (x - (j + 0.5) * width) / half
        return np.where(np.abs(t) < 1.0, height * (1.0 - t * t) ** 3, 0.0)

    kinks = np.concatenate([centers - half, centers + half])
    return UnivariateFactor("bumps", {"cells": cells, "height": height,
                                      "support_fraction": support_fraction},
                            fn, tuple(np.sort(kinks).tolist()), tuple(centers.tolist()), period=width)


def sin_modulation(epsilon: float, frequency: int) -> UnivariateFactor:
    """x -> 1 + epsilon*sin(2*pi*frequency*x), with its extrema listed exactly."""
    if frequency < 1:
        raise ValidationError("frequency must be a positive integer")
    ext = [(m + 0.25) / frequency for m in range(frequency)] + \
          [(m + 0.75) / frequency for m in range(frequency)]
    return closed_form(lambda x: 1.0 + epsilon * np.sin(2 * math.pi * frequency * x),
                       name="sin-modulation", extrema=sorted(ext), period=1.0 / frequency,
                       epsilon=float(epsilon), frequency=int(frequency))


def sampled(nodes: Sequence[float], values: Sequence[float]) -> UnivariateFactor:
    """Piecewise linear interpolant of tabulated data."""
    xs = np.asarray(nodes, dtype=float)
    ys = np.asarray(values, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or np.any(np.diff(xs) <= 0):
        raise ValidationError("sampled factor needs increasing nodes matching values")
    return UnivariateFactor("sampled", {"nodes": xs.tolist(), "values": ys.tolist()},
                            lambda x: np.interp(x, xs, ys), tuple(xs.tolist()), tuple(xs.tolist()))


def product(*factors: UnivariateFactor) -> UnivariateFactor:
    if not factors:
        raise ValidationError("product of zero factors")

    def fn(x):
        out = np.ones_like(x)
        for f in factors:
            out = out * f.fn(x)
        return out

    periods = [f.period for f in factors if f.period]
    kinks = sorted({k for f in factors for k in f.kinks})
    extrema = sorted({e for f in factors for e in f.extrema} | set(kinks))
    return UnivariateFactor("product", {"factors": [f.kind for f in factors]}, fn,
                            tuple(kinks), tuple(extrema), min(periods) if periods else None)


def sum_factors(*factors: UnivariateFactor) -> UnivariateFactor:
    def fn(x):
        out = np.zeros_like(x)
        for f in factors:
            out = out + f.fn(x)
        return out

    periods = [f.period for f in factors if f.period]
    kinks = sorted({k for f in factors for k in f.kinks})
    extrema = sorted({e for f in factors for e in f.extrema} | set(kinks))
    return UnivariateFactor("sum", {"factors": [f.kind for f in factors]}, fn,
                            tuple(kinks), tuple(extrema), min(periods) if periods else None)


# -- separable functions -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UniformGrid:
    """Interior nodes j*h, j = 1..n_l, with h = 1/(n_l + 1) per dimension."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if any(n < 2 for n in self.sizes):
            raise ValidationError("every grid dimension needs at least 2 interior nodes")

    @classmethod
    def of(cls, n, d: int | None = None) -> "UniformGrid":
        if isinstance(n, UniformGrid):
            return n
        if np.isscalar(n):
            return cls((int(n),) * (d or 1))
        return cls(tuple(int(k) for k in n))

    @property
    def d(self) -> int:
        return len(self.sizes)

    @property
    def size(self) -> int:
        return int(np.prod(self.sizes))

    def h(self, axis: int = 0) -> float:
        return 1.0 / (self.sizes[axis] + 1)

    def nodes(self, axis: int = 0) -> np.ndarray:
        n = self.sizes[axis]
        return np.arange(1, n + 1) / (n + 1)


@dataclass(frozen=True, eq=False)
class SeparableFunction:
    """Sum of products of univariate factors; ``terms[s][l]`` is a_l^(s)."""

    terms: tuple[tuple[UnivariateFactor, ...], ...]

    def __post_init__(self):
        if not self.terms:
            raise ValidationError("separable function needs rank >= 1")
        d = len(self.terms[0])
        if d < 1 or any(len(t) != d for t in self.terms):
            raise ValidationError("all terms must have the same number of factors")

    @property
    def d(self) -> int:
        return len(self.terms[0])

    @property
    def rank(self) -> int:
        return len(self.terms)

    def factors(self, axis: int) -> list[UnivariateFactor]:
        return [t[axis] for t in self.terms]

    def __call__(self, *coords):
        """Evaluate at a point (scalars) or on matching coordinate arrays."""
        if len(coords) != self.d:
            raise DomainError(f"expected {self.d} coordinates, got {len(coords)}")
        out = 0.0
        for term in self.terms:
            p = 1.0
            for fac, c in zip(term, coords):
                p = p * fac(c)
            out = out + p
        return out

    def on_grid(self, *axes: np.ndarray) -> np.ndarray:
        """Values on the tensor grid spanned by 1D coordinate arrays."""
        if len(axes) != self.d:
            raise DomainError(f"expected {self.d} axes")
        out = 0.0
        for term in self.terms:
            vals = [fac(ax) for fac, ax in zip(term, axes)]
            prod = vals[0]
            for v in vals[1:]:
                prod = np.multiply.outer(prod, v)
            out = out + prod
        return np.asarray(out)

    def probe_axes(self, min_points: int = PROBE_POINTS) -> list[np.ndarray]:
        return [probe_grid(self.factors(ax), min_points) for ax in range(self.d)]


def evaluate(coeff: SeparableFunction, point: Sequence[float]) -> float:
    """Pointwise value sum_s prod_l a_l^(s)(x_l)."""
    pt = tuple(float(p) for p in np.atleast_1d(point))
    if any(p < 0 or p > 1 for p in pt):
        raise DomainError(f"point {pt} outside [0, 1]^{len(pt)}")
    return float(coeff(*pt))


class SeparableRhs(SeparableFunction):
    """Right-hand side; no sign restriction."""


class SeparableCoefficient(SeparableFunction):
    """Diffusion coefficient; checked positive on a dense probe grid."""

    def __post_init__(self):
        super().__post_init__()
        axes = self.probe_axes({1: PROBE_POINTS, 2: 257}.get(self.d, 33))
        if np.min(self.on_grid(*axes)) <= 0:
            raise ValidationError("coefficient is not strictly positive on the probe grid")


def coefficient_1d(*factors: UnivariateFactor) -> SeparableCoefficient:
    """1D coefficient given as a sum of factors."""
    return SeparableCoefficient(tuple((f,) for f in factors))


def make_periodic_bumps(L: int, height: float = 1.0, support_fraction: float = 0.5,
                        C: float = 0.5) -> SeparableCoefficient:
    """2D coefficient C + b(x1) b(x2) with b an L-bump factor (epsilon = 1/L)."""
    if C <= 0:
        raise ValidationError("base constant C must be positive")
    b = bump_factor(L, height, support_fraction)
    one, c = constant(1.0), constant(C)
    return SeparableCoefficient(((c, one), (b, b)))


def make_modulated(mean: UnivariateFactor, epsilon: float, frequency: int) -> SeparableCoefficient:
    """1D coefficient g(x)(1 + epsilon sin(2 pi frequency x))."""
    if not 0 <= epsilon < 1:
        raise ValidationError("modulation amplitude epsilon must lie in [0, 1)")
    probe = mean.probe_points()
    if np.min(mean(probe)) <= 0:
        raise ValidationError("mean function must be positive")
    if epsilon == 0:
        return coefficient_1d(mean)
    return coefficient_1d(product(mean, sin_modulation(epsilon, frequency)))


def coeff_bounds(coeff: SeparableFunction, min_points: int = PROBE_POINTS) -> tuple[float, float]:
    """(min, max) of the coefficient over the probe grid.

    This is a grid approximation of the true inf/sup; it is exact for the
    generators in this module because their kinks and extrema are sampled.
    """
    vals = coeff.on_grid(*coeff.probe_axes(min_points))
    return float(np.min(vals)), float(np.max(vals))
