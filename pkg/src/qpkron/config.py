"""Run configuration: TOML (or JSON echo) files turned into problem objects.

A config file has the blocks ``[problem]`` (with nested ``coefficient`` and
``rhs`` tables), ``[preconditioner]``, ``[solver]``, ``[output]``, and the
optional diagnostic blocks ``[rankplot]``, ``[sincplot]`` and
``[oracle_check]``.  Every block is filled with defaults and validated, and
the fully resolved dictionary is what run records echo back, so a record can
be fed to the CLI again as a JSON config.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import coefficients as cf
from .coefficients import SeparableCoefficient, SeparableRhs, UnivariateFactor
from .errors import ValidationError
from .lowrank import TruncationPolicy
from .operator_bounds import homogenized_coefficient, optimal_piecewise_constants
from .solver import Problem, SolveConfig


class ConfigError(ValidationError):
    """Malformed or inconsistent configuration; the message names the field."""


DEFAULTS = {
    "problem": {
        "dimension": 1,
        "n": 255,
        "lumped": True,
        "coefficient": {"kind": "constant", "value": 1.0},
        "rhs": {"kind": "constant", "value": 1.0},
    },
    "preconditioner": {"kind": "constant", "value": "auto", "breakpoints": [], "mean": None,
                       "function": None},
    "solver": {
        "method": "fixed-point",
        "rho": "auto",
        "max_iterations": 50,
        "stop_rule": "residual",
        "tol": 1e-8,
        "inverse": "exact",
        "sinc_M": 36,
        "certificates": False,
        "flux_size": 15,
        "truncation": {"rel_tol": None, "max_rank": None},
    },
    "output": {"record": "run_record.json", "solution_csv": False},
    "rankplot": {"grids": [95, 143, 191], "threshold": 1e-6},
    "sincplot": {"dimension": 1, "n": 63, "M": [4, 8, 12, 16, 24, 32, 48, 64]},
    "oracle_check": {"n": 255, "instances": 5, "steps": 10},
}

_CHOICES = {
    ("solver", "method"): ("fixed-point", "pcg"),
    ("solver", "stop_rule"): ("residual", "gap"),
    ("solver", "inverse"): ("exact", "sinc"),
    ("preconditioner", "kind"): ("constant", "mean-function", "piecewise", "homogenized", "function"),
}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"[{where}] unknown field {key!r}")
        if isinstance(defaults[key], dict) and key not in ("coefficient", "rhs"):
            if not isinstance(value, dict):
                raise ConfigError(f"[{where}] {key}: expected a table")
            out[key] = _merge(defaults[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def _positive(value, where: str, integer: bool = False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0
    if integer:
        ok = ok and float(value).is_integer()
    if not ok or (isinstance(value, float) and not math.isfinite(value)):
        kind = "a positive integer" if integer else "a positive number"
        raise ConfigError(f"{where}: expected {kind}, got {value!r}")
    return int(value) if integer else float(value)


def _grid_size(value, where: str) -> int:
    n = _positive(value, where, integer=True)
    if n < 2:
        raise ConfigError(f"{where}: need at least 2 interior nodes, got {n}")
    return n


def _number(spec: dict, key: str, where: str, default=None, positive=False):
    if key not in spec:
        if default is None:
            raise ConfigError(f"{where}: missing field {key!r}")
        return default
    v = spec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if positive:
        return _positive(v, f"{where}.{key}")
    return float(v)


def _list(spec: dict, key: str, where: str, default=None) -> list[float]:
    v = spec.get(key, default)
    if v is None:
        raise ConfigError(f"{where}: missing field {key!r}")
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                          for x in v):
        raise ConfigError(f"{where}.{key}: expected a list of numbers")
    return [float(x) for x in v]


# -- function specs ----------------------------------------------------------------

def build_factor(spec: dict, where: str = "factor") -> UnivariateFactor:
    """Univariate factor from a table with a ``kind`` field."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where}: expected a table with a 'kind' field")
    kind = spec["kind"]
    try:
        if kind == "constant":
            return cf.constant(_number(spec, "value", where))
        if kind == "piecewise":
            return cf.make_piecewise(_list(spec, "breakpoints", where), _list(spec, "values", where))
        if kind == "two-level":
            return cf.periodic_two_level(_number(spec, "low", where), _number(spec, "high", where),
                                         _number(spec, "kappa", where),
                                         int(_number(spec, "cells", where, positive=True)),
                                         _number(spec, "start", where, 0.0),
                                         _number(spec, "stop", where, 1.0))
        if kind == "bump":
            return cf.bump_factor(int(_number(spec, "cells", where, positive=True)),
                                  _number(spec, "height", where, 1.0),
                                  _number(spec, "support_fraction", where, 0.5))
        if kind == "sin":
            return cf.sine(_number(spec, "omega", where), _number(spec, "phase", where, 0.0))
        if kind == "polynomial":
            return cf.polynomial(_list(spec, "coefficients", where))
        if kind == "modulation":
            return cf.sin_modulation(_number(spec, "epsilon", where),
                                     int(_number(spec, "frequency", where, positive=True)))
        if kind in ("product", "sum"):
            parts = spec.get("factors")
            if not isinstance(parts, list) or not parts:
                raise ConfigError(f"{where}.factors: expected a non-empty list of tables")
            built = [build_factor(p, f"{where}.factors[{i}]") for i, p in enumerate(parts)]
            return cf.product(*built) if kind == "product" else cf.sum_factors(*built)
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}.kind: unknown factor kind {kind!r}")


def _terms(spec: dict, d: int, where: str) -> tuple[tuple[UnivariateFactor, ...], ...]:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where}: expected a table with a 'kind' field")
    kind = spec["kind"]
    one = cf.constant(1.0)
    try:
        if kind == "constant":
            return ((cf.constant(_number(spec, "value", where)),) + (one,) * (d - 1),)
        if kind == "bumps":
            if d != 2:
                raise ConfigError(f"{where}: 'bumps' needs dimension = 2")
            a = cf.make_periodic_bumps(int(_number(spec, "L", where, positive=True)),
                                       _number(spec, "height", where, 1.0),
                                       _number(spec, "support_fraction", where, 0.5),
                                       _number(spec, "C", where, 0.5))
            return a.terms
        if kind == "modulated":
            if d != 1:
                raise ConfigError(f"{where}: 'modulated' needs dimension = 1")
            mean = build_factor(spec.get("mean", {"kind": "constant", "value": 1.0}), f"{where}.mean")
            a = cf.make_modulated(mean, _number(spec, "epsilon", where),
                                  int(_number(spec, "frequency", where, positive=True)))
            return a.terms
        if kind == "product" and d == 2:
            parts = spec.get("factors")
            if not isinstance(parts, list) or len(parts) != 2:
                raise ConfigError(f"{where}.factors: expected one factor table per axis")
            return (tuple(build_factor(p, f"{where}.factors[{i}]") for i, p in enumerate(parts)),)
        if kind == "sum-of-terms":
            parts = spec.get("terms")
            if not isinstance(parts, list) or not parts:
                raise ConfigError(f"{where}.terms: expected a non-empty list of tables")
            return tuple(t for i, p in enumerate(parts) for t in _terms(p, d, f"{where}.terms[{i}]"))
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    if d == 1:
        return ((build_factor(spec, where),),)
    raise ConfigError(f"{where}.kind: {kind!r} is not available in 2D")


def build_coefficient(spec: dict, d: int, where: str = "problem.coefficient") -> SeparableCoefficient:
    try:
        return SeparableCoefficient(_terms(spec, d, where))
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_rhs(spec: dict, d: int, where: str = "problem.rhs") -> SeparableRhs:
    return SeparableRhs(_terms(spec, d, where))


# -- resolved run configuration ---------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` is the resolved, JSON-ready echo."""

    data: dict

    @property
    def dimension(self) -> int:
        return self.data["problem"]["dimension"]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(self.data["problem"]["n"])

    def coefficient(self) -> SeparableCoefficient:
        return build_coefficient(self.data["problem"]["coefficient"], self.dimension)

    def rhs(self) -> SeparableRhs:
        return build_rhs(self.data["problem"]["rhs"], self.dimension)

    def preconditioner(self, a: SeparableCoefficient | None = None) -> SeparableCoefficient:
        """Coefficient of the separable preconditioner described by ``[preconditioner]``."""
        block = self.data["preconditioner"]
        a = a or self.coefficient()
        d, kind = self.dimension, block["kind"]
        where = "preconditioner"
        if kind == "constant":
            value = block["value"]
            if value == "auto":
                lo, hi = cf.coeff_bounds(a, 257 if d == 2 else cf.PROBE_POINTS)
                value = math.sqrt(lo * hi)
            return SeparableCoefficient(((cf.constant(value),) + (cf.constant(1.0),) * (d - 1),))
        if d != 1:
            raise ConfigError(f"{where}.kind: {kind!r} is only available in 1D")
        if kind == "mean-function":
            coeff = self.data["problem"]["coefficient"]
            if block["mean"] is not None:
                mean = build_factor(block["mean"], f"{where}.mean")
            elif coeff.get("kind") == "modulated":
                mean = build_factor(coeff.get("mean", {"kind": "constant", "value": 1.0}),
                                    "problem.coefficient.mean")
            else:
                raise ConfigError(f"{where}: 'mean-function' needs a modulated coefficient or a 'mean' table")
            return cf.coefficient_1d(mean)
        bps = block["breakpoints"]
        try:
            if kind == "piecewise":
                return optimal_piecewise_constants(a, bps).preconditioner()
            if kind == "homogenized":
                edges = [0.0, *bps, 1.0]
                fac = a.terms[0][0] if a.rank == 1 else cf.sum_factors(*a.factors(0))
                vals = [homogenized_coefficient(fac, (edges[i], edges[i + 1])) for i in range(len(edges) - 1)]
                return cf.coefficient_1d(cf.make_piecewise(bps, vals))
        except ConfigError:
            raise
        except ValidationError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        if block["function"] is None:
            raise ConfigError(f"{where}: kind 'function' needs a 'function' table")
        return build_coefficient(block["function"], d, f"{where}.function")

    def problem(self, n: int | tuple[int, ...] | None = None) -> Problem:
        a = self.coefficient()
        sizes = self.sizes if n is None else n
        return Problem.build(a, self.preconditioner(a), self.rhs(), sizes, self.data["problem"]["lumped"])

    def truncation(self) -> TruncationPolicy | None:
        t = self.data["solver"]["truncation"]
        if t["rel_tol"] is None and t["max_rank"] is None:
            return None
        return TruncationPolicy(t["rel_tol"], t["max_rank"])

    def solve_config(self) -> SolveConfig:
        s = self.data["solver"]
        return SolveConfig(rho=s["rho"], max_iterations=s["max_iterations"], stop_rule=s["stop_rule"],
                           tol=s["tol"], truncation=self.truncation(), inverse=s["inverse"],
                           sinc_M=s["sinc_M"], certificates=s["certificates"])


def _validate(data: dict) -> dict:
    p = data["problem"]
    if p["dimension"] not in (1, 2) or isinstance(p["dimension"], bool):
        raise ConfigError(f"[problem] dimension: must be 1 or 2, got {p['dimension']!r}")
    d = p["dimension"]
    n = p["n"]
    n = [n] * d if not isinstance(n, list) else n
    if len(n) != d:
        raise ConfigError(f"[problem] n: expected {d} grid sizes, got {len(n)}")
    p["n"] = [_grid_size(v, "[problem] n") for v in n]
    if not isinstance(p["lumped"], bool):
        raise ConfigError("[problem] lumped: expected true or false")
    for (block, key), allowed in _CHOICES.items():
        if data[block][key] not in allowed:
            raise ConfigError(f"[{block}] {key}: must be one of {', '.join(allowed)}; got {data[block][key]!r}")
    pre = data["preconditioner"]
    if pre["value"] != "auto":
        pre["value"] = _positive(pre["value"], "[preconditioner] value")
    pre["breakpoints"] = _list(pre, "breakpoints", "[preconditioner]")
    s = data["solver"]
    if s["rho"] != "auto":
        s["rho"] = _positive(s["rho"], "[solver] rho")
    if isinstance(s["max_iterations"], bool) or not isinstance(s["max_iterations"], int) or s["max_iterations"] < 0:
        raise ConfigError("[solver] max_iterations: expected a nonnegative integer")
    s["tol"] = _positive(s["tol"], "[solver] tol")
    s["sinc_M"] = _positive(s["sinc_M"], "[solver] sinc_M", integer=True)
    s["flux_size"] = _positive(s["flux_size"], "[solver] flux_size", integer=True)
    if not isinstance(s["certificates"], bool):
        raise ConfigError("[solver] certificates: expected true or false")
    if s["stop_rule"] == "gap" and not s["certificates"]:
        raise ConfigError("[solver] stop_rule: 'gap' needs certificates = true")
    t = s["truncation"]
    if t["rel_tol"] is not None:
        t["rel_tol"] = _positive(t["rel_tol"], "[solver.truncation] rel_tol")
    if t["max_rank"] is not None:
        t["max_rank"] = _positive(t["max_rank"], "[solver.truncation] max_rank", integer=True)
    rp = data["rankplot"]
    rp["grids"] = [_grid_size(v, "[rankplot] grids") for v in rp["grids"]]
    rp["threshold"] = _positive(rp["threshold"], "[rankplot] threshold")
    sp = data["sincplot"]
    if sp["dimension"] not in (1, 2):
        raise ConfigError("[sincplot] dimension: must be 1 or 2")
    sp["n"] = _grid_size(sp["n"], "[sincplot] n")
    sp["M"] = [_positive(v, "[sincplot] M", integer=True) for v in sp["M"]]
    oc = data["oracle_check"]
    for key in ("n", "instances", "steps"):
        oc[key] = _positive(oc[key], f"[oracle_check] {key}", integer=True)
    oc["n"] = _grid_size(oc["n"], "[oracle_check] n")
    if not isinstance(data["output"]["solution_csv"], bool):
        raise ConfigError("[output] solution_csv: expected true or false")
    return data


def resolve(raw: dict) -> RunConfig:
    """Merge defaults, validate, and build every object once to surface errors early."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    data = {}
    for block, defaults in DEFAULTS.items():
        given = raw.get(block, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{block}] expected a table")
        data[block] = _merge(defaults, given, block)
    extra = set(raw) - set(DEFAULTS)
    if extra:
        raise ConfigError(f"unknown block(s): {', '.join(sorted(extra))}")
    cfg = RunConfig(_validate(data))
    a = cfg.coefficient()
    cfg.rhs()
    cfg.preconditioner(a)
    return cfg


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse TOML text; syntax errors carry the line and column."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return resolve(raw)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a ``.toml`` config, or a ``.json`` echo taken from a run record."""
    if path is None:
        return resolve({})
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return resolve(raw.get("config", raw))
    return parse_config(text, str(path))
