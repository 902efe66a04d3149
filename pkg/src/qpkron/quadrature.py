"""Composite Gauss quadrature on uniform P1 meshes of [0, 1].

Every one-dimensional integral in the package (stiffness/mass entries, load
vectors, majorant integrals, flux Gram matrices) goes through
:class:`ElementQuadrature`, so a single accuracy knob controls all of them.
Elements are split at coefficient kinks and refined to resolve the shortest
oscillation period, which makes the rule exact for piecewise polynomial
integrands of degree <= 2*order - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

GAUSS_ORDER = 5
SUBDIVISIONS_PER_PERIOD = 16


@lru_cache(maxsize=16)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (t + 1.0), 0.5 * w


def _edges(n: int, kinks: Iterable[float], period: float | None,
           per_period: int, extra: Iterable[float]) -> np.ndarray:
    h = 1.0 / (n + 1)
    m = 1
    if period is not None and period > 0:
        m = max(1, math.ceil(h * per_period / period))
    base = np.linspace(0.0, 1.0, (n + 1) * m + 1)
    pts = [base]
    for src in (kinks, extra):
        arr = np.asarray([p for p in src if 0.0 < p < 1.0], dtype=float)
        if arr.size:
            pts.append(arr)
    edges = np.unique(np.concatenate(pts))
    keep = np.concatenate(([True], np.diff(edges) > 1e-14))
    edges = edges[keep]
    edges[0], edges[-1] = 0.0, 1.0
    return edges


@dataclass(frozen=True, eq=False)
class ElementQuadrature:
    """Quadrature points attached to the n+1 elements of a uniform grid.

    ``n`` is the number of interior (degree-of-freedom) nodes; element ``e``
    spans ``[e*h, (e+1)*h]`` with ``h = 1/(n+1)``.
    """

    n: int
    edges: np.ndarray
    x: np.ndarray
    w: np.ndarray
    elem: np.ndarray
    seg: np.ndarray
    order: int

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    def integrate(self, values: np.ndarray) -> float | np.ndarray:
        return np.tensordot(self.w, values, axes=(0, 0))

    def hats(self) -> tuple[np.ndarray, np.ndarray]:
        """Values of the two element-local hats (left node, right node)."""
        right = (self.x - self.elem * self.h) / self.h
        return 1.0 - right, right

    def _pad(self, nodal: np.ndarray) -> np.ndarray:
        nodal = np.asarray(nodal, dtype=float)
        shape = (1,) + nodal.shape[1:]
        return np.concatenate([np.zeros(shape), nodal, np.zeros(shape)])

    def values(self, nodal: np.ndarray) -> np.ndarray:
        """Evaluate the P1 interpolant of interior nodal values (n,) or (n, K)."""
        full = self._pad(nodal)
        left, right = self.hats()
        if full.ndim > 1:
            left, right = left[:, None], right[:, None]
        return left * full[self.elem] + right * full[self.elem + 1]

    def gradient(self, nodal: np.ndarray) -> np.ndarray:
        full = self._pad(nodal)
        return (full[self.elem + 1] - full[self.elem]) / self.h

    def basis_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (n_q, n) matrices of hat values and hat derivatives."""
        nq = self.x.size
        phi = np.zeros((nq, self.n + 2))
        dphi = np.zeros((nq, self.n + 2))
        left, right = self.hats()
        rows = np.arange(nq)
        phi[rows, self.elem] = left
        phi[rows, self.elem + 1] = right
        dphi[rows, self.elem] = -1.0 / self.h
        dphi[rows, self.elem + 1] = 1.0 / self.h
        return phi[:, 1:-1], dphi[:, 1:-1]

    def load(self, values: np.ndarray) -> np.ndarray:
        """Return the vector of integrals of ``values * phi_i`` over interior hats."""
        left, right = self.hats()
        out = np.zeros(self.n + 2)
        np.add.at(out, self.elem, self.w * values * left)
        np.add.at(out, self.elem + 1, self.w * values * right)
        return out[1:-1]

    def antiderivative(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Values of ``x -> int_0^x func`` at the quadrature points."""
        t, wt = gauss_legendre(self.order)
        a, b = self.edges[:-1], self.edges[1:]
        seg_int = (b - a) * (func(a[:, None] + (b - a)[:, None] * t) @ wt)
        cumulative = np.concatenate(([0.0], np.cumsum(seg_int)))
        start = self.edges[self.seg]
        length = self.x - start
        partial = length * (func(start[:, None] + length[:, None] * t) @ wt)
        return cumulative[self.seg] + partial


def element_quadrature(n: int, kinks: Iterable[float] = (), period: float | None = None,
                       order: int = GAUSS_ORDER, per_period: int = SUBDIVISIONS_PER_PERIOD,
                       extra_edges: Iterable[float] = ()) -> ElementQuadrature:
    edges = _edges(n, kinks, period, per_period, extra_edges)
    t, wt = gauss_legendre(order)
    a, b = edges[:-1], edges[1:]
    x = (a[:, None] + (b - a)[:, None] * t).ravel()
    w = ((b - a)[:, None] * wt).ravel()
    seg = np.repeat(np.arange(a.size), order)
    mid = 0.5 * (a + b)
    elem_of_seg = np.clip(np.floor(mid * (n + 1)).astype(int), 0, n)
    return ElementQuadrature(n=n, edges=edges, x=x, w=w, elem=elem_of_seg[seg],
                             seg=seg, order=order)


def quadrature_for(n: int, *factors, extra_edges: Iterable[float] = (),
                   order: int = GAUSS_ORDER) -> ElementQuadrature:
    """Element quadrature adapted to the kinks and periods of ``factors``."""
    kinks: list[float] = []
    periods = []
    for fac in factors:
        kinks.extend(fac.kinks)
        if fac.period is not None:
            periods.append(fac.period)
    period = min(periods) if periods else None
    return element_quadrature(n, kinks, period, order=order, extra_edges=extra_edges)
