"""Reference experiments shared by the ``oracle-check`` command, the demos and the tests.

Each function builds its own problem, runs the library against an
independent oracle and returns plain numbers.  Thresholds are left to the
callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import (SeparableCoefficient, SeparableRhs, UniformGrid, coefficient_1d,
                           constant, make_modulated, make_periodic_bumps, make_piecewise,
                           periodic_two_level, polynomial, sine, sum_factors)
from .error_bounds import exact_step_derivative_1d, majorant_1d, _quad_1d
from .kron_fem import assemble_kron_stiffness, assemble_preconditioner, densify, galerkin_stiffness_2d
from .lowrank import LowRankVector, TruncationPolicy, energy_norm, singular_profile
from .operator_bounds import optimal_rho
from .sinc_inv import build_inverse, inverse_error
from .solver import (Problem, SolveConfig, asymptotic_ratio, dense_oracle_solve, error_sequence,
                     iterate, make_inverse, oracle_for, pcg_solve)


# -- standard problems ---------------------------------------------------------------

def two_level_problem(n: int = 511, beta: float = 0.5, levels=(1.0, 3.0)) -> Problem:
    """a = levels[0] on (0, beta), levels[1] on (beta, 1); constant a0 = sqrt(low*high)."""
    a = coefficient_1d(make_piecewise((beta,), levels))
    a0 = coefficient_1d(constant(math.sqrt(levels[0] * levels[1])))
    return Problem.build(a, a0, SeparableRhs(((constant(1.0),),)), n)


def modulated_problem(epsilon: float, n: int = 255, frequency: int = 8) -> Problem:
    """a = g (1 + eps sin(2 pi k x)) with a two-level mean g, preconditioned by a0 = g."""
    g = make_piecewise((0.5,), (1.0, 2.0))
    a = make_modulated(g, epsilon, frequency)
    return Problem.build(a, coefficient_1d(g), SeparableRhs(((sine(math.pi),),)), n)


def random_1d_problem(rng: np.random.Generator, n: int = 255) -> Problem:
    """Periodic two-level coefficient, constant a0 and a sine load with random parameters."""
    low = rng.uniform(0.5, 2.0)
    high = low * rng.uniform(1.5, 4.0)
    kappa = rng.uniform(0.2, 0.8)
    cells = int(rng.integers(2, 12))
    a = coefficient_1d(periodic_two_level(low, high, kappa, cells))
    a0 = coefficient_1d(constant(rng.uniform(0.5, 3.0)))
    f = SeparableRhs(((sine(rng.uniform(1.0, 20.0), rng.uniform(0.0, 2 * math.pi)),),))
    return Problem.build(a, a0, f, n)


def bumps_problem(L: int, n: int, C: float = 0.5, support_fraction: float = 0.5) -> Problem:
    """2D problem with a = C + b(x1) b(x2), a0 = 1 and f = sin(2 x1) sin(2 x2)."""
    a = make_periodic_bumps(L, 1.0, support_fraction, C)
    one = constant(1.0)
    a0 = SeparableCoefficient(((one, one),))
    f = SeparableRhs(((sine(2.0), sine(2.0)),))
    return Problem.build(a, a0, f, n)


# -- experiments ------------------------------------------------------------------------

def contraction_ratios(problem: Problem, steps: int = 30, rho: float | None = None) -> tuple[np.ndarray, float]:
    """Measured ||u_k - u||o / ||u_{k-1} - u||o for k = 1..steps and the predicted q.

    Uses the exact preconditioner inverse; the errors follow the homogeneous
    error recursion started from u_0 - u.
    """
    rho = optimal_rho(*problem.ratio_bounds) if rho is None else rho
    inv = make_inverse(problem.L0)
    u = oracle_for(problem)
    e0 = inv(problem.rhs) - u
    errs = error_sequence(problem, e0, rho, steps, inv)
    return errs[1:] / errs[:-1], problem.q(rho)


def modulated_rate(epsilon: float, n: int = 255) -> float:
    return asymptotic_ratio(modulated_problem(epsilon, n))


@dataclass(frozen=True)
class SandwichRow:
    instance: int
    k: int
    lower: float
    error: float
    upper: float


def certificate_sandwich(instances: int = 20, n: int = 255, steps: int = 15,
                         seed: int = 0) -> list[SandwichRow]:
    """Certificates of every iterate against the direct solution on random 1D instances."""
    rng = np.random.default_rng(seed)
    rows = []
    cfg = SolveConfig(max_iterations=steps, tol=1e-300, certificates=True, keep_iterates=True)
    for i in range(instances):
        prob = random_1d_problem(rng, n)
        u = oracle_for(prob)
        state = iterate(cfg, prob)
        for k, (v, cert) in enumerate(zip(state.iterates, state.certificates)):
            err = energy_norm(v - u, prob.L0_consistent)
            rows.append(SandwichRow(i, k, cert.lower, err, cert.upper))
    return rows


def no_gap(problem: Problem, v: np.ndarray, v_tilde: np.ndarray, rho: float | None = None) -> tuple[float, float]:
    """(M, ||v_rho - v_tilde||o) in 1D: closed-form majorant vs direct quadrature of the exact step."""
    rho = optimal_rho(*problem.ratio_bounds) if rho is None else rho
    quad = _quad_1d(v.size, problem.a, problem.a0, problem.f)
    M = majorant_1d(v, v_tilde, problem.a, problem.a0, problem.f, rho, quad).value
    d_exact = exact_step_derivative_1d(v, problem.a, problem.a0, problem.f, rho, quad)
    diff = d_exact - quad.gradient(v_tilde)
    a0 = sum(t[0].fn(quad.x) for t in problem.a0.terms)
    return M, math.sqrt(float(quad.w @ (a0 * diff * diff)))


def continuous_error_1d(problem: Problem, v: np.ndarray) -> float:
    """||v - u||o against the exact solution u of the continuous 1D problem.

    Integrating once gives a u' = g + c with g = -int_0^x f; the constant c
    makes int u' vanish, so u' is known in closed form up to quadrature.
    """
    v = np.asarray(v, dtype=float)
    quad = _quad_1d(v.size, problem.a, problem.a0, problem.f)
    fa = sum(t[0].fn(quad.x) for t in problem.a.terms)
    fa0 = sum(t[0].fn(quad.x) for t in problem.a0.terms)
    g = -quad.antiderivative(lambda x: sum(t[0].fn(x) for t in problem.f.terms))
    c = -(quad.w @ (g / fa)) / (quad.w @ (1.0 / fa))
    diff = quad.gradient(v) - (g + c) / fa
    return math.sqrt(float(quad.w @ (fa0 * diff * diff)))


def laplacian(n: int, d: int = 1):
    one = constant(1.0)
    a0 = SeparableCoefficient(((one,) * d,))
    return assemble_preconditioner(a0, UniformGrid.of(n, d))


def sinc_errors(Ms, n: int = 63, d: int = 1) -> np.ndarray:
    """Relative spectral error of the sinc inverse of the lumped Laplacian for every M."""
    L = laplacian(n, d)
    return np.array([inverse_error(build_inverse(L, int(M))) for M in Ms])


def log_linear_fit(Ms, errors) -> tuple[float, float]:
    """Slope and R^2 of log(error) against sqrt(M)."""
    x = np.sqrt(np.asarray(Ms, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return float(slope), r2


def assembly_difference(n: int = 16, R: int = 2) -> float:
    """Relative max difference between the Kronecker stiffness and a brute-force Galerkin matrix."""
    first = (periodic_two_level(1.0, 3.0, 0.4, 3), sum_factors(sine(math.pi, 0.5), constant(1.5)))
    second = (sine(2 * math.pi, 0.3), polynomial((0.2, 0.3)))
    coeff = SeparableCoefficient((first, second)[:R])
    grid = UniformGrid.of(n, 2)
    K = densify(assemble_kron_stiffness(coeff, grid, lumped=False))
    G = galerkin_stiffness_2d(coeff, grid)
    return float(np.max(np.abs(K - G)) / np.max(np.abs(G)))


def rank_profiles(grids=(95, 143, 191), L: int = 8, C: float = 0.5) -> dict[int, np.ndarray]:
    """Normalized singular values sigma_k/sigma_1 of the direct solution on each grid."""
    out = {}
    for n in grids:
        prob = bumps_problem(L, n, C)
        u = dense_oracle_solve(prob.A, prob.rhs).reshape(prob.grid.sizes)
        s = singular_profile(u)
        out[int(n)] = s / s[0]
    return out


def profile_deviation(profiles: dict[int, np.ndarray], threshold: float = 1e-6) -> tuple[float, int]:
    """Largest relative deviation from the finest-grid profile over k with sigma_k/sigma_1 >= threshold.

    Returns (deviation, number of compared indices).
    """
    finest = profiles[max(profiles)]
    keep = np.nonzero(finest >= threshold)[0]
    worst = 0.0
    for n, p in profiles.items():
        k = keep[keep < p.size]
        worst = max(worst, float(np.max(np.abs(p[k] - finest[k]) / finest[k])))
    return worst, int(keep.size)


@dataclass(frozen=True)
class PCGRun:
    n: int
    iterations: int
    converged: bool
    final_residual: float
    energy_error: float
    max_rank: int


def truncated_pcg(n: int = 255, L: int = 6, tol: float = 1e-6, max_rank: int | None = 30,
                  rel_tol: float = 1e-6, M: int = 36, max_iterations: int = 50,
                  C: float = 0.5) -> PCGRun:
    """Truncated PCG on the 2D bump problem with the sinc inverse of the Laplacian as preconditioner.

    The energy error is relative to the direct solution, in the A-norm.
    """
    prob = bumps_problem(L, n, C)
    B = make_inverse(laplacian(n, 2), "sinc", M)
    policy = TruncationPolicy(rel_tol, max_rank)
    res = pcg_solve(prob.A, prob.rhs, B, tol, policy, max_iterations)
    u = LowRankVector.from_matrix(dense_oracle_solve(prob.A, prob.rhs).reshape(prob.grid.sizes))
    err = energy_norm(res.solution - u, prob.A) / energy_norm(u, prob.A)
    return PCGRun(n, res.iterations, res.converged, res.residuals[res.best_iteration], err, max(res.ranks))
