import json
from pathlib import Path

import jsonschema
import pytest

from qpkron.cli import run
from qpkron.config import ConfigError, parse_config, resolve

ROOT = Path(__file__).resolve().parents[1]
SCHEMA = json.loads((ROOT / "docs" / "run_record.schema.json").read_text())

MODULATED = """
[problem]
n = 127
[problem.coefficient]
kind = "modulated"
epsilon = 0.3
frequency = 8
[preconditioner]
kind = "mean-function"
[solver]
max_iterations = 12
certificates = true
"""

PIECEWISE = """
[problem]
n = 63
[problem.coefficient]
kind = "piecewise"
breakpoints = [0.5]
values = [1.0, 3.0]
[solver]
rho = 1.9
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_resolve():
    cfg = resolve({})
    assert cfg.dimension == 1 and cfg.data["problem"]["n"] == [255]
    assert cfg.solve_config().max_iterations == 50


@pytest.mark.parametrize("text, fragment", [
    ("[solver]\ntol = -1\n", "tol"),
    ("[solver]\nbogus = 1\n", "bogus"),
    ("[nonsense]\n", "nonsense"),
    ("[problem]\ndimension = 3\n", "dimension"),
    ("[problem]\nn = 1\n", "n"),
    ("[problem.coefficient]\nkind = \"piecewise\"\nbreakpoints = [0.7, 0.2]\nvalues = [1.0, 2.0, 3.0]\n",
     "breakpoints"),
])
def test_invalid_configs_name_the_field(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_toml_syntax_error_reports_position():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("[solver]\ntol = = 3\n", "bad.toml")


def test_bounds_command_modulated(tmp_path, capsys):
    cfg = write(tmp_path, MODULATED)
    assert run(["--config", str(cfg), "--out", str(tmp_path), "bounds"]) == 0
    out = json.loads((tmp_path / "bounds.json").read_text())
    assert out["q"] == pytest.approx(0.3, abs=1e-12)
    assert out["rho_star"] == pytest.approx(1.0, abs=1e-12)
    assert out["mu_minus"] >= out["c1"] - 1e-12
    assert json.loads(capsys.readouterr().out) == out


def test_solve_record_is_valid_and_reproducible(tmp_path):
    cfg = write(tmp_path, MODULATED)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["--config", str(cfg), "--out", str(a), "solve"]) == 0
    assert run(["--config", str(cfg), "--out", str(b), "solve"]) == 0
    ta, tb = (a / "run_record.json").read_text(), (b / "run_record.json").read_text()
    assert ta == tb
    rec = json.loads(ta)
    jsonschema.validate(rec, SCHEMA)
    assert rec["steps"][0]["ratio"] is None
    assert all(s["certificate"]["lower"] <= s["certificate"]["upper"] for s in rec["steps"])
    # a run record can be fed back as its own config
    assert run(["--config", str(a / "run_record.json"), "--out", str(tmp_path / "c"), "solve"]) == 0
    assert (tmp_path / "c" / "run_record.json").read_text() == ta


def test_zero_iterations_single_step(tmp_path):
    cfg = write(tmp_path, MODULATED.replace("max_iterations = 12", "max_iterations = 0"))
    assert run(["--config", str(cfg), "--out", str(tmp_path), "solve"]) == 0
    rec = json.loads((tmp_path / "run_record.json").read_text())
    assert len(rec["steps"]) == 1 and rec["steps"][0]["certificate"] is not None


def test_timings_only_on_request(tmp_path):
    cfg = write(tmp_path, MODULATED)
    run(["--config", str(cfg), "--out", str(tmp_path), "bounds"])
    assert "timings" not in json.loads((tmp_path / "bounds.json").read_text())
    run(["--config", str(cfg), "--out", str(tmp_path), "--timings", "bounds"])
    assert "timings" in json.loads((tmp_path / "bounds.json").read_text())


def test_errors_command_has_oracle_column(tmp_path):
    cfg = write(tmp_path, MODULATED)
    assert run(["--config", str(cfg), "--out", str(tmp_path), "errors"]) == 0
    out = json.loads((tmp_path / "errors.json").read_text())
    for row in out["steps"]:
        assert row["lower"] <= row["oracle_error"] * (1 + 1e-6) + 1e-12
        assert row["oracle_error"] <= row["upper"] * (1 + 1e-6) + 1e-12


def test_exit_codes(tmp_path):
    bad = write(tmp_path, "[solver]\ntol = 0\n", "bad.toml")
    assert run(["--config", str(bad), "--out", str(tmp_path), "solve"]) == 2
    syntax = write(tmp_path, "[solver\n", "syntax.toml")
    assert run(["--config", str(syntax), "--out", str(tmp_path), "solve"]) == 2
    missing = tmp_path / "missing.toml"
    assert run(["--config", str(missing), "--out", str(tmp_path), "solve"]) == 2
    div = write(tmp_path, PIECEWISE, "div.toml")
    assert run(["--config", str(div), "--out", str(tmp_path), "solve"]) == 3
    assert run(["--out", str(tmp_path), "--threads", "0", "bounds"]) == 2
    assert run(["--out", str(tmp_path), "rankplot"]) == 2
    sinc = write(tmp_path, "[solver]\ninverse = \"sinc\"\n", "sinc.toml")
    assert run(["--config", str(sinc), "--out", str(tmp_path), "solve"]) == 2


def test_sincplot_csv(tmp_path):
    cfg = write(tmp_path, "[sincplot]\nn = 31\nM = [4, 16, 64]\n")
    assert run(["--config", str(cfg), "--out", str(tmp_path), "--threads", "1", "sincplot"]) == 0
    lines = (tmp_path / "sincplot.csv").read_text().splitlines()
    assert lines[0] == "M,rel_error"
    errs = [float(line.split(",")[1]) for line in lines[1:]]
    assert errs[0] > errs[1] > errs[2] and errs[2] <= 1e-5


def test_rankplot_csv(tmp_path):
    cfg = write(tmp_path, (ROOT / "configs" / "bumps2d.toml").read_text()
                .replace("grids = [95, 143, 191]", "grids = [31, 47]"))
    assert run(["--config", str(cfg), "--out", str(tmp_path), "rankplot"]) == 0
    lines = (tmp_path / "rankplot.csv").read_text().splitlines()
    assert lines[0] == "n,k,sigma_k,sigma_ratio,policy"
    first = lines[1].split(",")
    assert first[:2] == ["31", "1"] and float(first[3]) == 1.0


def test_shipped_configs_parse():
    for path in (ROOT / "configs").glob("*.toml"):
        parse_config(path.read_text(), str(path))


def test_oracle_check_passes(tmp_path):
    cfg = write(tmp_path, "[oracle_check]\nn = 127\ninstances = 3\nsteps = 8\n")
    assert run(["--config", str(cfg), "--out", str(tmp_path), "oracle-check"]) == 0
    report = json.loads((tmp_path / "oracle_check.json").read_text())
    assert report["passed"] and len(report["checks"]) == 6


PCG_2D = """
[problem]
dimension = 2
n = 15
[problem.coefficient]
kind = "bumps"
L = 2
C = 0.5
[preconditioner]
kind = "constant"
value = 1.0
[solver]
method = "pcg"
tol = 1e-8
max_iterations = 30
"""


def test_pcg_record_is_valid(tmp_path):
    cfg = write(tmp_path, PCG_2D)
    assert run(["--config", str(cfg), "--out", str(tmp_path), "solve"]) == 0
    rec = json.loads((tmp_path / "run_record.json").read_text())
    jsonschema.validate(rec, SCHEMA)
    assert rec["method"] == "pcg" and rec["converged"] and not rec["stagnated"]
    assert rec["best_iteration"] == rec["iterations"]


def test_threads_flag_never_raises_pool_size(tmp_path):
    # requesting more threads than the machine has must not enlarge BLAS pools
    cfg = write(tmp_path, PCG_2D)
    assert run(["--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "64", "solve"]) == 0
    assert run(["--config", str(cfg), "--out", str(tmp_path / "b"), "solve"]) == 0
    assert (tmp_path / "a" / "run_record.json").read_text() == (tmp_path / "b" / "run_record.json").read_text()
