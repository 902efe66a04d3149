"""Command-line front end: ``qpkron <command> --config run.toml --out DIR``.

Commands and their outputs (all written under ``--out`` and echoed to stdout):

  solve         run_record.json (or [output].record); optional solution CSV
  bounds        bounds.json
  errors        errors.json, one certificate per step
  rankplot      rankplot.csv with columns n,k,sigma_k,sigma_ratio,policy
  sincplot      sincplot.csv with columns M,rel_error
  oracle-check  oracle_check.json; exit status 1 when a check fails

Exit codes: 0 success, 1 failed checks, 2 configuration or validation
error, 3 divergence, 4 numerical breakdown.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from contextlib import contextmanager, nullcontext
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import RunConfig, load_config
from .error_bounds import step_certifier
from .errors import DivergenceError, NumericalBreakdownError, ValidationError
from .lowrank import energy_norm, singular_profile
from .operator_bounds import optimal_rho, spectral_report
from .sinc_inv import build_inverse, inverse_error
from .solver import ORACLE_MAX, dense_oracle_solve, iterate, make_inverse, oracle_for, pcg_solve

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_BREAKDOWN = 0, 1, 2, 3, 4
RECORD_VERSION = 1
EIG_LIMIT = 1024


def code_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


class Timer:
    """Wall-clock sections; only reported with --timings so records stay reproducible."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.sections: dict[str, float] = {}

    @contextmanager
    def section(self, name: str):
        t0 = time.perf_counter()
        yield
        self.sections[name] = self.sections.get(name, 0.0) + time.perf_counter() - t0


def _finite(x):
    return None if x is None else float(x)


def _report(cfg: RunConfig, problem=None) -> dict:
    problem = problem or cfg.problem()
    rep = spectral_report(problem.a, problem.a0, problem.grid, eig_limit=EIG_LIMIT)
    return rep.to_dict()


# -- commands ------------------------------------------------------------------------------

def cmd_bounds(cfg: RunConfig, timer: Timer) -> dict:
    with timer.section("bounds"):
        out = _report(cfg)
    if timer.enabled:
        out["timings"] = dict(sorted(timer.sections.items()))
    return out


def _solution_rows(u) -> list[list]:
    if u.d == 1:
        return [["index", "value"]] + [[i, float(x)] for i, x in enumerate(u.full())]
    U, V = u.factors
    rows = [["factor", "column", "index", "value"]]
    for name, F in (("U", U), ("V", V)):
        for j in range(F.shape[1]):
            rows += [[name, j, i, float(x)] for i, x in enumerate(F[:, j])]
    return rows


def cmd_solve(cfg: RunConfig, timer: Timer) -> tuple[dict, list | None]:
    """Fixed-point iteration (or truncated PCG) with the per-step record."""
    s = cfg.data["solver"]
    with timer.section("setup"):
        problem = cfg.problem()
        report = _report(cfg, problem)
        sc = cfg.solve_config()
        inv = make_inverse(problem.L0, sc.inverse, sc.sinc_M)
    record = {"record_version": RECORD_VERSION, "code_version": code_version(), "command": "solve",
              "config": cfg.data, "spectral_report": report,
              "truncation_policy": sc.truncation.describe() if sc.truncation else None}
    if s["method"] == "pcg":
        with timer.section("solve"):
            res = pcg_solve(problem.A, problem.rhs, inv, sc.tol, sc.truncation, sc.max_iterations)
        record.update(method="pcg", rho=None, q=None, converged=res.converged, iterations=res.iterations,
                      best_iteration=res.best_iteration, stagnated=res.stagnated,
                      steps=[{"k": k, "residual": r, "rank": rk, "ratio": None if k == 0 else
                              (r / res.residuals[k - 1] if res.residuals[k - 1] > 0 else 0.0),
                              "certificate": None}
                             for k, (r, rk) in enumerate(zip(res.residuals, res.ranks))])
        u = res.solution
    else:
        certifier = None
        if sc.certificates:
            rho = optimal_rho(*problem.ratio_bounds) if sc.rho == "auto" else sc.rho
            sizes = tuple(min(n, s["flux_size"]) for n in problem.grid.sizes)
            certifier = step_certifier(problem, rho, flux_sizes=sizes)
        with timer.section("solve"):
            state = iterate(sc, problem, inverse=inv, certifier=certifier)
        steps = []
        for k in range(len(state.residuals)):
            cert = state.certificates[k].to_dict() if state.certificates else None
            steps.append({"k": k, "residual": state.residuals[k], "rank": state.ranks[k],
                          "ratio": _finite(state.ratios[k]), "certificate": cert})
        record.update(method="fixed-point", rho=state.rho, q=problem.q(state.rho),
                      converged=state.converged, iterations=state.k, steps=steps)
        u = state.iterate
    rows = _solution_rows(u) if cfg.data["output"]["solution_csv"] else None
    if timer.enabled:
        record["timings"] = dict(sorted(timer.sections.items()))
    return record, rows


def cmd_errors(cfg: RunConfig, timer: Timer) -> dict:
    """Per-step certificates; oracle errors are added when a direct solve is affordable."""
    s = cfg.data["solver"]
    with timer.section("setup"):
        problem = cfg.problem()
        sc = cfg.solve_config()
        sc = replace(sc, certificates=True, keep_iterates=True)
        inv = make_inverse(problem.L0, sc.inverse, sc.sinc_M)
        rho = optimal_rho(*problem.ratio_bounds) if sc.rho == "auto" else sc.rho
        sizes = tuple(min(n, s["flux_size"]) for n in problem.grid.sizes)
        certifier = step_certifier(problem, rho, flux_sizes=sizes)
    with timer.section("solve"):
        state = iterate(sc, problem, inverse=inv, certifier=certifier)
    u = oracle_for(problem) if problem.grid.size <= ORACLE_MAX else None
    steps = []
    for k, (v, cert) in enumerate(zip(state.iterates, state.certificates)):
        row = {"k": k, **cert.to_dict()}
        if u is not None:
            row["oracle_error"] = energy_norm(v - u, problem.L0_consistent)
        steps.append(row)
    out = {"record_version": RECORD_VERSION, "code_version": code_version(), "command": "errors",
           "config": cfg.data, "rho": state.rho, "steps": steps}
    if timer.enabled:
        out["timings"] = dict(sorted(timer.sections.items()))
    return out


def cmd_rankplot(cfg: RunConfig, timer: Timer) -> list[list]:
    """Normalized singular values of the direct solution on every grid of [rankplot]."""
    if cfg.dimension != 2:
        raise ValidationError("rankplot needs problem.dimension = 2")
    rp = cfg.data["rankplot"]
    policy = f"exact-svd;threshold={rp['threshold']:g}"
    rows = [["n", "k", "sigma_k", "sigma_ratio", "policy"]]
    for n in rp["grids"]:
        with timer.section(f"n={n}"):
            problem = cfg.problem(n)
            u = dense_oracle_solve(problem.A, problem.rhs).reshape(problem.grid.sizes)
            s = singular_profile(u)
        for k, sk in enumerate(s, start=1):
            ratio = sk / s[0]
            if ratio < rp["threshold"]:
                break
            rows.append([n, k, float(sk), float(ratio), policy])
    return rows


def cmd_sincplot(cfg: RunConfig, timer: Timer) -> list[list]:
    """Relative spectral error of the sinc inverse of the Laplacian against M."""
    sp = cfg.data["sincplot"]
    with timer.section("sincplot"):
        L = diag.laplacian(sp["n"], sp["dimension"])
        rows = [["M", "rel_error"]]
        rows += [[M, inverse_error(build_inverse(L, M))] for M in sp["M"]]
    return rows


def cmd_oracle_check(cfg: RunConfig, timer: Timer, seed: int) -> dict:
    """End-to-end checks of contraction, certificates, majorant and sinc inverse."""
    oc = cfg.data["oracle_check"]
    n = oc["n"]
    checks = []

    def add(name, value, threshold, passed):
        checks.append({"name": name, "value": float(value), "threshold": float(threshold),
                       "passed": bool(passed)})

    with timer.section("contraction"):
        ratios, q = diag.contraction_ratios(diag.two_level_problem(n), steps=30)
        add("contraction ratio <= q", ratios.max(), q + 1e-8, ratios.max() <= q + 1e-8)
    with timer.section("rate"):
        r = diag.modulated_rate(0.3, n)
        add("asymptotic rate near epsilon=0.3", r, 0.3, 0.28 <= r <= 0.3 + 1e-8)
    with timer.section("certificates"):
        rows = diag.certificate_sandwich(oc["instances"], n, oc["steps"], seed)
        slack = min(min(r.error - r.lower, r.upper - r.error) for r in rows)
        add("certificate sandwich slack", slack, -1e-10, slack >= -1e-10)
    with timer.section("majorant"):
        rng = np.random.default_rng(seed)
        prob = diag.random_1d_problem(rng, n)
        v = oracle_for(prob).full() * (1 + 0.01 * rng.standard_normal(n))
        vt = v + 0.01 * rng.standard_normal(n) * np.max(np.abs(v))
        M, exact = diag.no_gap(prob, v, vt)
        add("majorant gap with exact flux", abs(M - exact), 1e-8, abs(M - exact) <= 1e-8)
    with timer.section("sinc"):
        err = diag.sinc_errors([64], min(n, 63))[0]
        add("sinc inverse error at M=64", err, 1e-5, err <= 1e-5)
    with timer.section("assembly"):
        diff = max(diag.assembly_difference(16, R) for R in (1, 2))
        add("Kronecker vs brute-force assembly", diff, 1e-12, diff <= 1e-12)
    out = {"record_version": RECORD_VERSION, "code_version": code_version(), "command": "oracle-check",
           "seed": seed, "n": n, "checks": checks, "passed": all(c["passed"] for c in checks)}
    if timer.enabled:
        out["timings"] = dict(sorted(timer.sections.items()))
    return out


# -- plumbing ----------------------------------------------------------------------------

def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qpkron", description="Preconditioned low-rank solver with error certificates.")
    p.add_argument("--config", type=Path, help="TOML config (or a JSON run record to re-run)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--threads", type=int, help="limit BLAS/LAPACK threads")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the outputs")
    p.add_argument("command", choices=["solve", "bounds", "errors", "rankplot", "sincplot", "oracle-check"])
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None:
        from threadpoolctl import threadpool_info, threadpool_limits
        # Only ever lower a pool's size: OpenBLAS segfaults when raised past
        # the thread count it was initialized with.
        limiter = threadpool_limits(limits={lib["prefix"]: min(args.threads, lib["num_threads"])
                                            for lib in threadpool_info()})
    else:
        limiter = nullcontext()
    timer = Timer(args.timings)
    try:
        with limiter:
            cfg = load_config(args.config)
            status = EXIT_OK
            if args.command == "bounds":
                text, name = dumps(cmd_bounds(cfg, timer)), "bounds.json"
            elif args.command == "solve":
                record, rows = cmd_solve(cfg, timer)
                if rows is not None:
                    _write(args.out, "solution.csv", csv_text(rows))
                text, name = dumps(record), cfg.data["output"]["record"]
            elif args.command == "errors":
                text, name = dumps(cmd_errors(cfg, timer)), "errors.json"
            elif args.command == "rankplot":
                text, name = csv_text(cmd_rankplot(cfg, timer)), "rankplot.csv"
            elif args.command == "sincplot":
                text, name = csv_text(cmd_sincplot(cfg, timer)), "sincplot.csv"
            else:
                report = cmd_oracle_check(cfg, timer, args.seed)
                text, name = dumps(report), "oracle_check.json"
                status = EXIT_OK if report["passed"] else EXIT_FAILED
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except NumericalBreakdownError as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    _write(args.out, name, text)
    sys.stdout.write(text)
    return status


def main() -> None:
    sys.exit(run())
