import json

import pytest

from flowlab.cli import main, run_scenario
from flowlab.errors import ScenarioError
from flowlab.scenario import parse_scenario

SADDLE_FLOWBOX = """
# flowbox verification on the planar saddle
field linear
  matrix 1 0 0 -1

command flowbox
  bases 3
  grid 4
  sample-box 0.4 2.0 -1.5 1.5

seed 7
tol 1e-10
"""

ROTATION_EXPANSIVE = """
field rotation

command expansive
  mode rescaled
  points 1.0 0.0  1.1 0.0  0.8 0.3
  horizon -3 3
  epsilons 0.01
  deltas 0.2
  budget 30
  lipschitz 1.05

seed 3
"""


def test_parse_basic():
    sc = parse_scenario(SADDLE_FLOWBOX)
    assert sc.field_kind == "linear"
    assert sc.command == "flowbox"
    assert sc.seed == 7
    assert sc.tol == 1e-10
    assert sc.options["bases"] == 3


def test_parse_reports_line_numbers():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario("field rotation\n\ncommand flowbox\n  nope 3\n")
    assert exc.value.line == 4


def test_parse_unknown_command():
    with pytest.raises(ScenarioError):
        parse_scenario("field rotation\n\ncommand warp\n")


def test_parse_requires_field():
    with pytest.raises(ScenarioError):
        parse_scenario("command flowbox\n")


def test_unknown_field_kind_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.scn"
    p.write_text("field warpdrive\n\ncommand flowbox\n  bases 1\n")
    assert run_scenario(str(p)) == 2
    err = capsys.readouterr().err
    assert "registry" in err


def test_flowbox_scenario_passes(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(SADDLE_FLOWBOX)
    code = run_scenario(str(p), out=str(tmp_path / "out"))
    assert code == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["max_dev"] <= 0.5 + 1e-3
    assert (tmp_path / "out" / "series-flowbox.csv").exists()
    assert (tmp_path / "out" / "run-meta.json").exists()


def test_expansive_scenario_finds_violation(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(ROTATION_EXPANSIVE)
    code = run_scenario(str(p), out=str(tmp_path / "out"))
    assert code == 1
    witnesses = sorted((tmp_path / "out").glob("witness-*.json"))
    assert witnesses


def test_replay_subcommand(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(ROTATION_EXPANSIVE)
    run_scenario(str(p), out=str(tmp_path / "out"))
    w = sorted((tmp_path / "out").glob("witness-*.json"))[0]
    assert main(["replay", str(w)]) == 0


def test_reports_byte_identical(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(ROTATION_EXPANSIVE)
    run_scenario(str(p), out=str(tmp_path / "a"))
    run_scenario(str(p), out=str(tmp_path / "b"))
    assert (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()


def test_seed_override_changes_report(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(SADDLE_FLOWBOX)
    run_scenario(str(p), out=str(tmp_path / "a"))
    run_scenario(str(p), out=str(tmp_path / "b"), seed=123)
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    assert ra["scenario"]["seed"] != rb["scenario"]["seed"]


def test_list_fields(capsys):
    assert main(["list-fields"]) == 0
    out = capsys.readouterr().out
    for kind in ("linear", "rotation", "lorenz", "saddle_suspension"):
        assert kind in out


def test_constants_scenario(tmp_path):
    p = tmp_path / "c.scn"
    p.write_text("""
field rotation

command constants
  t 1.0
  epsilons 0.1 0.3
  sample-box 0.5 1.5 -0.5 0.5

seed 1
""")
    assert run_scenario(str(p), out=str(tmp_path / "out")) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["L"] == pytest.approx(1.05)
    assert rep["r0"] == pytest.approx(1 / 10.5)
    assert "epsilon0" in rep


def test_fixedpoint_scenario(tmp_path):
    p = tmp_path / "f.scn"
    p.write_text("""
field rotation

command fixedpoint
  systems 4
  starts 3
  blocks 8
  kappa-max 0.8

seed 11
""")
    assert run_scenario(str(p), out=str(tmp_path / "out")) == 0
    assert (tmp_path / "out" / "series-fixedpoint.csv").exists()


def test_shadow_scenario(tmp_path):
    p = tmp_path / "sh.scn"
    p.write_text("""
field rotation

command shadow
  pairs 5
  epsilon 0.3
  t-factor 2.0
  sample-box 0.5 1.5 -0.5 0.5

seed 5
tol 1e-10
""")
    assert run_scenario(str(p), out=str(tmp_path / "out")) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["violations"] == 0


def test_threads_option_deterministic(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(SADDLE_FLOWBOX)
    run_scenario(str(p), out=str(tmp_path / "a"), threads=1)
    run_scenario(str(p), out=str(tmp_path / "b"), threads=4)
    assert (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()
