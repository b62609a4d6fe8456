import csv
import json
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibra.cli import SCHEMA_VERSION, Scenario, dump_report, main, parse_scenario, run_scenario

TILTED = """
[fixture:tilted]
curve = closed_form
domain = 0, 1
x = t
y = 0
u1 = 1
u2 = 3 + z
side_coords = cartesian
"""


def _run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


# -- scenario text ----------------------------------------------------------------

_names = st.from_regex(r"[a-z][a-z0-9_]{0,10}", fullmatch=True)
_values = st.from_regex(r"[A-Za-z0-9_.,+*/() -]{0,20}", fullmatch=True).map(str.strip)


@settings(max_examples=60, deadline=None)
@given(
    sub=st.sampled_from(["euler-check", "calibrate-verify", "steklov", "sufficient", "counterexample", "blowup"]),
    fixture=st.none() | _names,
    tols=st.dictionaries(_names, st.floats(1e-15, 1e3, allow_nan=False), max_size=4),
    opts=st.dictionaries(_names.filter(lambda s: s not in ("fixture", "out", "csv", "subcommand")), _values,
                         max_size=4),
    fixtures=st.dictionaries(_names, st.dictionaries(_names, _values, min_size=1, max_size=3), max_size=2),
)
def test_scenario_round_trip(sub, fixture, tols, opts, fixtures):
    sc = Scenario(sub, fixture, tols, None, None, opts, fixtures)
    back = parse_scenario(sc.to_text())
    assert back == sc
    assert back.to_text() == sc.to_text()


def test_parse_errors_are_scenario_errors():
    for text in ("no sections", "[scenario]\nfixture = x\n", "[scenario]\nsubcommand = fly\n",
                 "[scenario]\nsubcommand = steklov\ntol.a = abc\n"):
        out = run_scenario(text)
        assert out.code == 2 and out.reason.startswith("parse-error")


# -- exit codes ---------------------------------------------------------------------


def test_exit_0_and_closed_form_line(capsys):
    code, out, err = _run(["steklov", "--rect", "1", "1"], capsys)
    assert code == 0 and err == ""
    assert "K = 3.15" in out and "closed form" in out


def test_exit_1_failed_check(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[scenario]\nsubcommand = euler-check\nfixture = tilted\n" + TILTED)
    code, out, err = _run(["euler-check", "--config", str(cfg)], capsys)
    assert code == 1
    assert err.strip().splitlines() == ["calibra: exit=1 reason=euler-condition-violated"]


def test_exit_1_when_tolerance_tightened(capsys):
    code, _, err = _run(["steklov", "--rect", "1", "1", "--h", "0.125", "--tol", "1e-6"], capsys)
    assert code == 1 and err.startswith("calibra: exit=1 reason=closed-form-mismatch")


@pytest.mark.parametrize("argv", [
    ["steklov"],
    ["steklov", "--rect", "1"],
    ["steklov", "--rect", "1", "-1"],
    ["bogus"],
    ["counterexample", "--l-over-c", "x"],
    ["calibrate-verify", "--fixture", "pure_jump_line", "--tol", "zz=1e-3"],
    ["calibrate-verify", "--fixture", "pure_jump_line", "--grid", "0"],
])
def test_exit_2_parse_errors(argv, capsys):
    code, out, err = _run(argv, capsys)
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("calibra: exit=2 reason=parse-error")


def test_exit_2_unreadable_config(tmp_path, capsys):
    code, _, err = _run(["steklov", "--config", str(tmp_path / "missing.ini")], capsys)
    assert code == 2 and "cannot read config" in err


@pytest.mark.parametrize("argv", [
    ["euler-check", "--fixture", "no_such_fixture"],
    ["calibrate-verify", "--fixture", "missing"],
])
def test_exit_3_fixture_errors(argv, capsys):
    code, _, err = _run(argv, capsys)
    assert code == 3
    assert err.strip().startswith("calibra: exit=3 reason=fixture-error")
    assert len(err.strip().splitlines()) == 1


def test_exit_3_malformed_fixture_section(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[scenario]\nsubcommand = euler-check\nfixture = broken\n[fixture:broken]\ndomain = 0, 1\n")
    code, _, err = _run(["euler-check", "--config", str(cfg)], capsys)
    assert code == 3 and "lacks key" in err


def test_console_script_exit_code():
    proc = subprocess.run([sys.executable, "-m", "calibra.cli", "euler-check", "--fixture", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 3
    assert proc.stderr.startswith("calibra: exit=3 reason=fixture-error")


# -- reports ------------------------------------------------------------------------


def test_json_report_envelope(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, _ = _run(["euler-check", "--fixture", "pure_jump_line", "--out", str(out)], capsys)
    rep = json.loads(out.read_text())
    assert code == 0
    assert rep["schema_version"] == SCHEMA_VERSION
    assert set(rep) == {"schema_version", "scenario", "passed", "reason", "report"}
    assert rep["passed"] is True and rep["reason"] is None


def test_json_is_byte_identical(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        _run(["counterexample", "--l-over-c", "2", "--levels", "3", "--mesh-h", "0.0625", "--out", str(p)],
             capsys)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_non_finite_values_become_strings():
    text = dump_report({"a": float("inf"), "b": [float("nan"), -float("inf")], "c": 1.5})
    assert json.loads(text) == {"a": "inf", "b": ["nan", "-inf"], "c": 1.5}


def test_counterexample_verdicts_and_csv(tmp_path, capsys):
    c = tmp_path / "sweep.csv"
    code, out, _ = _run(["counterexample", "--l-over-c", "0.5", "--halvings", "3", "--csv", str(c), "--out",
                         str(tmp_path / "r.json")], capsys)
    assert code == 0 and "none-found" in out
    rows = list(csv.reader(c.open()))
    assert rows[0] == ["eps", "delta_E"] and len(rows) == 5
    assert all(float(d) < 0 for _, d in rows[1:])
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["report"]["result"]["verdict"] == "none-found"


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[scenario]\nsubcommand = steklov\nrect = 2, 1\nh = 0.0625\ntol.default = 0.5\n")
    out = tmp_path / "r.json"
    _run(["steklov", "--config", str(cfg), "--h", "0.125", "--out", str(out)], capsys)
    rep = json.loads(out.read_text())
    assert rep["scenario"]["options"]["h"] == "0.125"
    assert rep["scenario"]["options"]["rect"] == "2, 1"
    assert rep["report"]["closed_form"]["tol"] == 0.5
    assert rep["report"]["result"]["h"] == 0.125


def test_sufficient_expectations(capsys):
    assert _run(["sufficient", "--fixture", "pure_jump_line", "--expect", "pass"], capsys)[0] == 0
    code, _, err = _run(["sufficient", "--counterexample-l", "9.5", "--h", "0.5", "--expect", "pass"], capsys)
    assert code == 1 and "unexpected-verdict" in err


def test_blowup_csv_written(tmp_path, capsys):
    c = tmp_path / "b.csv"
    code, out, _ = _run(["blowup", "--deltas", "0.5,0.25", "--csv", str(c)], capsys)
    assert code == 0
    rows = list(csv.reader(c.open()))
    assert rows[0] == ["delta", "K", "K_times_delta"] and len(rows) == 3


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("CALIBRA_THREADS", "1")
    assert run_scenario("[scenario]\nsubcommand = steklov\nrect = 1, 1\nh = 0.125\ntol.default = 0.1\n").code == 0
    monkeypatch.setenv("CALIBRA_THREADS", "many")
    assert run_scenario("[scenario]\nsubcommand = steklov\nrect = 1, 1\n").code == 2


def test_options_before_subcommand_survive(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[scenario]\nsubcommand = steklov\nrect = 1, 1\nh = 0.125\ntol.default = 0.1\n")
    out = tmp_path / "r.json"
    code, _, err = _run(["--config", str(cfg), "--out", str(out), "steklov"], capsys)
    assert code == 0, err
    assert json.loads(out.read_text())["report"]["result"]["h"] == 0.125


def test_reports_match_published_schema():
    import pathlib

    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads((pathlib.Path(__file__).parents[1] / "docs" / "report.schema.json").read_text())
    for text in ("[scenario]\nsubcommand = steklov\nrect = 1, 1\nh = 0.125\n",
                 "[scenario]\nsubcommand = sufficient\nfixture = pure_jump_line\n",
                 "[scenario]\nsubcommand = blowup\ndeltas = 0.5\n"):
        jsonschema.validate(json.loads(dump_report(run_scenario(text).report)), schema)
