import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quenchlab.cli import main
from quenchlab.harness import (SCHEMA, ConfigError, ExperimentConfig, RunManifest, collect_reports,
                               run_experiment)
from quenchlab.solver import Grid, ScalarField, write_field

SMALL_1D = """
name = small
gamma = 0.5
domain = interval
n = 129
datum = power
estimators = gradient
"""

SMALL_2D = """
name = dead_core
gamma = 0.5
domain = square
lower = -1.0
upper = 1.0
n = 129
datum = constant
datum_value = 0.4
rho = 0.3
"""


def write_cfg(tmp_path, text, name="run.cfg", **extra):
    body = text + "".join(f"{k} = {v}\n" for k, v in extra.items())
    path = tmp_path / name
    path.write_text(body)
    return path


# configuration

values = st.fixed_dictionaries({
    "gamma": st.floats(0.05, 0.95),
    "sigma0": st.floats(0.01, 0.49),
    "n": st.sampled_from([33, 65, 129]),
    "operator": st.sampled_from(["trace", "pucci+", "pucci-"]),
    "datum_value": st.floats(0.0, 10.0),
    "datum": st.sampled_from(["power", "constant"]),
    "seed": st.integers(0, 2**31),
    "sweep_stages": st.integers(0, 8),
    "threshold_c1": st.floats(1.0, 5.0),
})


@given(values)
def test_config_roundtrip(v):
    cfg = ExperimentConfig.from_text("", **v)
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back.values == cfg.values
    assert back.hash() == cfg.hash()


def test_schema_defaults_all_documented():
    cfg = ExperimentConfig.from_text("")
    assert set(cfg.values) == set(SCHEMA)
    assert all(len(entry) == 3 and entry[2] for entry in SCHEMA.values())


def test_every_problem_field_reachable():
    cfg = ExperimentConfig.from_text("operator = pucci-\nlam = 0.5\nLam = 3\ntol = 1e-9\nmax_iter = 17\n"
                                     "max_pseudo_steps = 33\nmode = sweep\nsweep_stages = 2\nsigma0 = 0.2\n")
    spec = cfg.problem()
    assert spec.operator.kind == "pucci-" and spec.operator.lam == 0.5 and spec.operator.Lam == 3.0
    assert spec.tol == 1e-9 and spec.max_iter == 17 and spec.max_pseudo_steps == 33
    assert len(spec.schedule) == 3 and spec.params.sigma0 == 0.2


@pytest.mark.parametrize("text,match", [
    ("epsilon = 1e-6\n", "floor"),
    ("bogus = 1\n", "unknown key"),
    ("gamma = 1.5\n", "gamma"),
    ("n = 64\n", "odd"),
    ("operator = laplace\n", "not one of"),
    ("gamma = abc\n", "cannot parse"),
    ("justtext\n", "key = value"),
    ("estimators = growth,magic\n", "unknown estimators"),
    ("operator = hessian-iota\n", "F\\(0\\)"),
])
def test_validation_rejects(text, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_text(text)


def test_hash_ignores_output_directory():
    a = ExperimentConfig.from_text("out = a\n")
    b = ExperimentConfig.from_text("out = b\n")
    c = ExperimentConfig.from_text("gamma = 0.4\n")
    assert a.hash() == b.hash() != c.hash()


# runs

def test_solve_run_and_cache(tmp_path):
    cfg = ExperimentConfig.from_text(SMALL_1D)
    out = tmp_path / "run"
    man = run_experiment(cfg, out)
    assert man.status == "ok" and man.checks_passed and not man.cached
    for name, digest in man.files.items():
        assert (out / name).is_file()
    assert {"config.cfg", "field.fld", "solve.json", "run_checks.json", "estimates.json"} <= set(man.files)
    stored = json.loads((out / "manifest.json").read_text())
    assert stored["files"] == man.files and stored["config_hash"] == cfg.hash()
    again = run_experiment(cfg, out)
    assert again.cached and again.files == man.files


def test_rerun_is_bit_identical(tmp_path):
    cfg = ExperimentConfig.from_text(SMALL_2D)
    first = run_experiment(cfg, tmp_path, use_cache=False)
    second = run_experiment(cfg, tmp_path, use_cache=False)
    assert first.files == second.files
    assert any(name.startswith("tables/") for name in first.files)


def test_cache_invalidated_by_tampering(tmp_path):
    cfg = ExperimentConfig.from_text(SMALL_1D)
    man = run_experiment(cfg, tmp_path)
    (tmp_path / "field.fld").write_text("tampered\n")
    assert not RunManifest.from_dict(man.to_dict()).verify(tmp_path)
    rerun = run_experiment(cfg, tmp_path)
    assert not rerun.cached and rerun.files == man.files


def test_sweep_structure(tmp_path):
    cfg = ExperimentConfig.from_text(SMALL_1D, mode="sweep", sweep_stages=6, n=257)
    man = run_experiment(cfg, tmp_path)
    fields = sorted(f for f in man.files if f.endswith(".fld"))
    assert fields == [f"field_k{k}.fld" for k in range(7)]
    rows = (tmp_path / "hausdorff.csv").read_text().splitlines()
    assert rows[0] == "k,epsilon,sup_difference,hausdorff" and len(rows) == 7


def test_degraded_run_keeps_earlier_outputs(tmp_path):
    # zero datum: the solve succeeds but there is no free boundary to estimate on
    cfg = ExperimentConfig.from_text(SMALL_2D, datum_value=0.0)
    man = run_experiment(cfg, tmp_path)
    assert man.status == "degraded" and man.checks_passed is False
    assert "field.fld" in man.files and any("empty free boundary" in f for f in man.flags)


def test_collect_reports(tmp_path):
    run_experiment(ExperimentConfig.from_text(SMALL_1D), tmp_path / "a")
    rows = collect_reports(tmp_path)
    names = {r[1] for r in rows}
    assert {"converged", "profile_error", "gradient_ratio_finite"} <= names


# command line

def test_cli_solve(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_1D)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "field.fld").is_file()
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "cached" in capsys.readouterr().out


def test_cli_missing_config_and_bad_flag(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.cfg")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--config", "x", "--frobnicate"])
    assert exc.value.code == 2


def test_cli_schema_violation(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_1D, epsilon="1e-9")
    assert main(["solve", "--config", str(cfg)]) == 2


def test_cli_estimate_zero_field(tmp_path, capsys):
    g = Grid.square(-1, 1, 33)
    path = tmp_path / "zero.fld"
    write_field(path, ScalarField(g, np.zeros(g.shape)))
    assert main(["estimate", "--field", str(path), "--out", str(tmp_path)]) != 0
    assert "empty free boundary" in capsys.readouterr().err


def test_cli_estimate_on_solved_field(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_2D)
    out = tmp_path / "o"
    run_experiment(ExperimentConfig.load(cfg), out)
    code = main(["estimate", "--field", str(out / "field.fld"), "--config", str(cfg), "--out", str(tmp_path / "e")])
    text = capsys.readouterr().out
    assert "density_ratio" in text and code in (0, 1)
    assert (tmp_path / "e" / "estimates.json").is_file()


def test_cli_barrier_check(tmp_path, capsys):
    assert main(["barrier-check", "--gamma", "0.5", "--eta", "1", "--op", "trace", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "barrier.json").read_text())
    assert data["A"] > 0 and data["certificate"]["passed"]


def test_cli_barrier_check_iota_fails(tmp_path, capsys):
    assert main(["barrier-check", "--op", "hessian-iota", "--out", str(tmp_path)]) == 1
    assert "empty bracket" in capsys.readouterr().err


def test_cli_oracle(tmp_path):
    assert main(["oracle", "--gamma", "0.5", "--op", "pucci+", "--dim", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "profile_pucci+_N2.csv").is_file()
    assert main(["oracle", "--op", "hessian-iota", "--dim", "2", "--out", str(tmp_path)]) == 1


def test_cli_report(tmp_path, capsys):
    run_experiment(ExperimentConfig.from_text(SMALL_1D), tmp_path / "a")
    assert main(["report", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "summary.csv").is_file()
    assert main(["report", "--out", str(tmp_path / "missing")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "quenchlab", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("solve", "sweep", "oracle", "barrier-check", "estimate", "report"):
        assert sub in res.stdout


def test_harnack_depths_and_positivity_level():
    from quenchlab.harness import EstimatorSettings, run_estimators
    from quenchlab.model import alpha
    from quenchlab.solver import solve_minimal
    cfg = ExperimentConfig.from_text(SMALL_2D)
    res = solve_minimal(cfg.problem())
    s = EstimatorSettings.for_grid(res.u.grid, 0.5, res.epsilon, rho=0.3, estimators=("density", "harnack"))
    rep = run_estimators(res.u, s)
    assert rep.provenance["positivity_threshold"] == pytest.approx(res.epsilon ** alpha(0.5))
    assert rep.provenance["threshold"] == pytest.approx(2 * res.epsilon ** alpha(0.5))
    depths = [d for name, t in rep.tables.items() if name.startswith("harnack") for d, _, _ in t.rows]
    assert depths and min(depths) >= res.epsilon * (1 - 1e-12)
