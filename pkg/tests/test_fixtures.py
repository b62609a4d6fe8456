import configparser

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibra.fixtures import BUILTIN, FixtureError, fixture_from_section, graph_domain, load_fixture


@pytest.mark.parametrize("name", sorted(BUILTIN))
def test_builtin_sections_round_trip(name):
    spec = BUILTIN[name]
    assert fixture_from_section(spec.as_section()) == spec


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(-3, 3), st.booleans(), st.floats(0.01, 1) | st.none())
def test_generated_sections_round_trip(R, u1, rev, hw):
    text = (f"[fixture:x]\ncurve = closed_form\nx = R*cos(t)\ny = R*sin(t)\ndomain = 0, 1\n"
            f"u1 = {u1!r}\nu2 = 5\nreverse = {str(rev).lower()}\nconstants = R: {R!r}\n")
    if hw is not None:
        text += f"halfwidth = {hw!r}\n"
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_string(text)
    spec = fixture_from_section(cfg["fixture:x"])
    assert fixture_from_section(spec.as_section()) == spec
    assert dict(spec.constants)["R"] == R and spec.reverse is rev and spec.halfwidth == hw


def test_config_section_overrides_builtin():
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_string("[fixture:pure_jump_line]\ndomain = 0, 2\nx = t\ny = 0\nu1 = 1\nu2 = 4\n")
    cand, spec = load_fixture("pure_jump_line", cfg)
    assert spec.domain == (0.0, 2.0) and cand.chart.length == pytest.approx(2.0)


def test_series_fixture():
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_string("[fixture:s]\ncurve = series\ncx = 0.5, 0.5\ncy = 0, 0, 0.05\ndomain = 0, 1\nu1 = 1\nu2 = 2\n")
    cand, _ = load_fixture("s", cfg)
    assert cand.chart.curvature.k > 0


@pytest.mark.parametrize("text, msg", [
    ("[fixture:b]\nx = t\ny = 0\nu1 = 1\nu2 = 2\n", "domain"),
    ("[fixture:b]\ndomain = 0\nx = t\ny = 0\nu1 = 1\nu2 = 2\n", "two numbers"),
    ("[fixture:b]\ncurve = spline\ndomain = 0, 1\nu1 = 1\nu2 = 2\n", "unknown curve"),
    ("[fixture:b]\ndomain = 0, 1\nx = t\ny = 0\nu1 = 1\nu2 = 2\nside_coords = polar\n", "side_coords"),
    ("[fixture:b]\ndomain = 0, 1\nx = t\ny = 0\nu1 = 1\nu2 = 2\nconstants = R=1\n", "name: value"),
])
def test_malformed_sections(text, msg):
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_string(text)
    with pytest.raises(FixtureError, match=msg):
        fixture_from_section(cfg["fixture:b"])


def test_unknown_fixture_lists_builtins():
    with pytest.raises(FixtureError, match="pure_jump_line"):
        load_fixture("nope")


def test_graph_domain():
    assert graph_domain(BUILTIN["graph_line"]) == (1.0, 0.1)
    with pytest.raises(FixtureError):
        graph_domain(BUILTIN["circle_arc"])
