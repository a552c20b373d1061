import csv
import json
from importlib.resources import files

import pytest

from chpme.cli import main
from chpme.config import Assertion, ConfigError, load_scenario, parse_scenario
from chpme.harness import SWEEP_COLUMNS, run_scenario, run_sweep

SCEN = files("chpme") / "scenarios"
BUNDLED = sorted(p.name for p in SCEN.iterdir() if p.name.endswith(".cfg"))


def cfg(name):
    return str(SCEN / name)


MINIMAL = """[scenario]
name = t
pipeline = solve

[manifold]
warp = hyperbolic
dim = 3

[pme]
m = 2.0

[datum]
generator = zero

[solver]
radii = 5.0
cells_per_unit = 4.0
horizon = 0.2
"""


# ---------------------------------------------------------------- config

def test_bundled_scenarios_present():
    for name in ("hyperbolic-blowup.cfg", "euclidean-barenblatt.cfg", "zero-datum.cfg"):
        assert name in BUNDLED
    assert (SCEN / "schema.md").is_file()


@pytest.mark.parametrize("name", BUNDLED)
def test_round_trip(name):
    sc = load_scenario(cfg(name))
    again = parse_scenario(sc.to_ini())
    assert again.data == sc.data
    assert again.assertions == sc.assertions
    assert parse_scenario(again.to_ini()).to_ini() == again.to_ini()


@pytest.mark.parametrize("text, section, key, line", [
    (MINIMAL.replace("name = t\n", ""), "scenario", "name", 1),
    (MINIMAL.replace("dim = 3", "dim = three"), "manifold", "dim", 7),
    (MINIMAL.replace("m = 2.0", "m = 0.5"), "pme", "m", 10),
    (MINIMAL.replace("warp = hyperbolic", "warp = torus"), "manifold", "warp", 6),
    (MINIMAL + "\n[extras]\nx = 1\n", "extras", None, 20),
    (MINIMAL.replace("horizon = 0.2", "horizon = soon"), "solver", "horizon", 18),
    (MINIMAL + "\n[assertions]\nbad = status is fine\n", "assertions", "bad", 21),
    (MINIMAL.replace("generator = zero", "generator = random"), "datum", "generator", 13),
    (MINIMAL + "boundary = reflecting\n", "solver", "boundary", 19),
])
def test_config_errors_locate_field(text, section, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text)
    err = exc.value
    assert err.section == section and err.key == key and err.line == line
    assert f"line {line}" in str(err)


def test_existence_needs_gamma_below_two():
    text = MINIMAL + "\n[curvature]\ngamma = 2.0\n"
    with pytest.raises(ConfigError):
        parse_scenario(text)
    parse_scenario(text.replace("pipeline = solve", "pipeline = profile"))


def test_psi_star_requires_curvature():
    with pytest.raises(ConfigError):
        parse_scenario(MINIMAL.replace("warp = hyperbolic", "warp = psi_star_upper"))


def test_assertion_check():
    a = Assertion("x", "t_est", "<=", 1.2)
    assert a.check({"t_est": 1.0}) is True
    assert a.check({"t_est": 1.3}) is False
    assert a.check({}) is None and a.check({"t_est": None}) is None
    assert Assertion("s", "status", "==", "BlowUp").check({"status": "BlowUp"})
    assert Assertion("b", "ok", "==", "True").check({"ok": True})
    assert Assertion("b", "ok", "==", "True").check({"ok": False}) is False


def test_with_value():
    sc = parse_scenario(MINIMAL)
    sc2 = sc.with_value("pme.m", 3.0)
    assert sc2.get("pme", "m") == 3.0 and sc.get("pme", "m") == 2.0
    with pytest.raises(ConfigError):
        sc.with_value("nowhere.m", 1.0)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_scenario("/nonexistent/x.cfg")


# ---------------------------------------------------------------- runs

def test_zero_datum_scenario(tmp_path):
    assert main(["solve", "--config", cfg("zero-datum.cfg"), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "trajectory_R10.csv").open()))
    assert rows and all(float(r["max_u"]) == 0.0 for r in rows)
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["status"] == "ReachedHorizon"


def test_hyperbolic_blowup_scenario(tmp_path):
    assert main(["solve", "--config", cfg("hyperbolic-blowup.cfg"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report_R40.json").read_text())
    assert rep["status"] == "BlowUp" and 0.8 <= rep["t_est"] <= 1.2
    res = list(csv.DictReader((tmp_path / "assertions.csv").open()))
    assert all(r["result"] == "pass" for r in res)


def test_barenblatt_scenario(tmp_path):
    assert main(["solve", "--config", cfg("euclidean-barenblatt.cfg"), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "convergence.csv").open()))
    assert [int(r["cells"]) for r in rows] == [100, 200, 400]
    assert all(float(r["contraction"]) >= 1.7 for r in rows[1:])


def test_barrier_check_strict(tmp_path):
    assert main(["barrier-check", "--config", cfg("barrier-suite.cfg"), "--out", str(tmp_path), "--strict"]) == 0
    header = (tmp_path / "barrier_super.csv").read_text().splitlines()[0]
    assert header == "rho,residual,tolerance,pass"


@pytest.mark.parametrize("sub, produced", [("geometry", "geometry.csv"), ("certify", "certificates.json"),
                                           ("profile", "profile.csv")])
def test_subcommands(tmp_path, sub, produced):
    assert main([sub, "--config", cfg("barrier-suite.cfg"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / produced).is_file()
    assert (tmp_path / "metrics.json").is_file()


def test_strict_turns_warnings_into_failure(tmp_path):
    path = tmp_path / "w.cfg"
    path.write_text(MINIMAL.replace("warp = hyperbolic", "warp = power_law\ndelta = 2.0")
                    .replace("pipeline = solve", "pipeline = geometry"))
    assert main(["geometry", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["geometry", "--config", str(path), "--out", str(tmp_path / "b"), "--strict"]) == 1


def test_failing_assertion_exit_code(tmp_path):
    path = tmp_path / "f.cfg"
    path.write_text(MINIMAL + "\n[assertions]\nimpossible = max_u_final > 1\n")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    res = (tmp_path / "o" / "assertions.csv").read_text()
    assert "impossible,max_u_final > 1.0,fail" in res


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(MINIMAL.replace("dim = 3", "dim = x"))
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "line 7" in capsys.readouterr().err


def test_csv_datum(tmp_path):
    (tmp_path / "d.csv").write_text("rho,u0\n0,1\n2,0\n10,0\n")
    path = tmp_path / "c.cfg"
    path.write_text(MINIMAL.replace("generator = zero", "generator = csv\npath = d.csv"))
    res = run_scenario(load_scenario(path), tmp_path / "o")
    assert res.metrics["status"] == "ReachedHorizon"
    assert 0 < res.metrics["max_u_final"] < 1


def test_determinism(tmp_path):
    sc = load_scenario(cfg("hyperbolic-blowup.cfg"))
    run_scenario(sc, tmp_path / "a")
    run_scenario(sc, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


# ---------------------------------------------------------------- sweeps

def test_empty_sweep(tmp_path):
    assert main(["sweep", "--config", cfg("gamma-sweep.cfg"), "--out", str(tmp_path), "--values", ""]) == 0
    assert (tmp_path / "sweep.csv").read_text().splitlines() == [",".join(SWEEP_COLUMNS)]


def test_gamma_sweep_exponents(tmp_path):
    rows = run_sweep(load_scenario(cfg("gamma-sweep.cfg")), tmp_path)
    assert [r["value"] for r in rows] == [-2.0, -1.0, 0.0, 1.0]
    for r in rows:
        assert r["ok"] and r["profile_exponent"] == pytest.approx(r["expected_exponent"], rel=0.1)


def test_sweep_records_partial_failure(tmp_path):
    rows = run_sweep(parse_scenario(MINIMAL), tmp_path, axis="pme.m", values=[2.0, 0.5, 3.0])
    assert [r["ok"] for r in rows] == [True, False, True]
    assert rows[1]["error"]
    text = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(text) == 4


def test_parallel_sweep_matches_serial(tmp_path):
    sc = parse_scenario(MINIMAL.replace("generator = zero", "generator = constant\namplitude = 1.0"))
    a = run_sweep(sc, tmp_path / "s", axis="datum.amplitude", values=[1.0, 2.0], workers=1)
    b = run_sweep(sc, tmp_path / "p", axis="datum.amplitude", values=[1.0, 2.0], workers=2)
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()
    assert [r["ok"] for r in a] == [r["ok"] for r in b] == [True, True]


def test_sweep_needs_axis(tmp_path):
    with pytest.raises(ConfigError):
        run_sweep(parse_scenario(MINIMAL), tmp_path, values=[1.0])
