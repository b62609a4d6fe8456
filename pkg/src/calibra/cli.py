"""Command-line scenario runner.

Every run is described by a :class:`Scenario`: a subcommand, an optional
fixture name, named tolerances, output paths and subcommand options.  A
scenario comes from an INI file (``[scenario]`` section, plus any
``[fixture:<name>]`` sections), from command-line flags, or both; flags win.

Exit codes: 0 when every requested check passes, 1 on a failed check, 2 on a
parse error, 3 on a fixture error.  Failures print a single line
``calibra: exit=<code> reason=<token> <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["SCHEMA_VERSION", "Scenario", "ScenarioError", "parse_scenario", "run_scenario", "main"]

SCHEMA_VERSION = 1
SUBCOMMANDS = ("euler-check", "calibrate-verify", "steklov", "sufficient", "counterexample", "blowup")

log = logging.getLogger("calibra")


class ScenarioError(ValueError):
    """Malformed scenario (exit code 2)."""


class _FixtureFailure(LookupError):
    """Raised for unknown or broken fixtures (exit code 3)."""


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    """One run.  ``options`` keeps subcommand options as normalised strings."""

    subcommand: str
    fixture: str | None = None
    tolerances: dict[str, float] = field(default_factory=dict)
    out: str | None = None
    csv: str | None = None
    options: dict[str, str] = field(default_factory=dict)
    fixtures: dict[str, dict[str, str]] = field(default_factory=dict)

    def to_config(self) -> configparser.ConfigParser:
        cfg = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
        sec: dict[str, str] = {"subcommand": self.subcommand}
        if self.fixture is not None:
            sec["fixture"] = self.fixture
        if self.out is not None:
            sec["out"] = self.out
        if self.csv is not None:
            sec["csv"] = self.csv
        for k in sorted(self.options):
            sec[k] = self.options[k]
        for k in sorted(self.tolerances):
            sec[f"tol.{k}"] = repr(float(self.tolerances[k]))
        cfg["scenario"] = sec
        for name in sorted(self.fixtures):
            cfg[f"fixture:{name}"] = dict(self.fixtures[name])
        return cfg

    def to_text(self) -> str:
        buf = io.StringIO()
        self.to_config().write(buf)
        return buf.getvalue()

    def fixture_config(self) -> configparser.ConfigParser:
        cfg = configparser.ConfigParser(interpolation=None)
        for name, sec in self.fixtures.items():
            cfg[f"fixture:{name}"] = sec
        return cfg

    def opt(self, key: str, default: str | None = None) -> str | None:
        return self.options.get(key, default)

    def as_dict(self) -> dict:
        return {"subcommand": self.subcommand, "fixture": self.fixture,
                "tolerances": dict(sorted(self.tolerances.items())), "options": dict(sorted(self.options.items()))}


def _read_config(text: str) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cfg.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(" ".join(str(exc).split())) from None
    return cfg


def parse_scenario(text: str) -> Scenario:
    """Scenario from INI text; the ``[scenario]`` section must name a subcommand."""
    cfg = _read_config(text)
    if not cfg.has_section("scenario"):
        raise ScenarioError("config has no [scenario] section")
    return _scenario_from_config(cfg)


def _scenario_from_config(cfg: configparser.ConfigParser, subcommand: str | None = None) -> Scenario:
    sec = dict(cfg["scenario"]) if cfg.has_section("scenario") else {}
    sub = subcommand or sec.pop("subcommand", None)
    sec.pop("subcommand", None)
    if sub is None:
        raise ScenarioError("no subcommand given")
    if sub not in SUBCOMMANDS:
        raise ScenarioError(f"unknown subcommand {sub!r}")
    tols = {}
    for key in [k for k in sec if k.startswith("tol.")]:
        tols[key[4:]] = _float(sec.pop(key), key)
    fixtures = {s.split(":", 1)[1]: dict(cfg[s]) for s in cfg.sections() if s.startswith("fixture:")}
    return Scenario(sub, sec.pop("fixture", None), tols, sec.pop("out", None), sec.pop("csv", None),
                    {k: v.strip() for k, v in sec.items()}, fixtures)


def _float(text: str, what: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ScenarioError(f"{what}: expected a number, got {text!r}") from None


def _floats(text: str | None, what: str, n: int | None = None) -> list[float]:
    if text is None:
        raise ScenarioError(f"missing option {what!r}")
    vals = [_float(v, what) for v in text.replace(";", ",").replace(" ", ",").split(",") if v.strip()]
    if n is not None and len(vals) != n:
        raise ScenarioError(f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def _ints(text: str, what: str) -> list[int]:
    vals = _floats(text, what)
    if any(v != int(v) or v <= 0 for v in vals):
        raise ScenarioError(f"{what}: expected positive integers, got {text!r}")
    return [int(v) for v in vals]


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "inf", "-inf" and "nan"."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Subcommands.  Each returns (payload, passed, reason, summary lines, csv rows)
# ---------------------------------------------------------------------------


def _load(sc: Scenario, default: str | None = None):
    from .curve_geometry import CurveError
    from .fixtures import FixtureError, load_fixture

    name = sc.fixture or default
    if name is None:
        raise ScenarioError("this subcommand needs --fixture")
    try:
        return load_fixture(name, sc.fixture_config())
    except (FixtureError, CurveError) as exc:
        raise _FixtureFailure(" ".join(str(exc).split())) from None


def _run_euler(sc: Scenario):
    from .euler_check import check_euler

    cand, _ = _load(sc)
    rep = check_euler(cand, sc.tolerances.get("euler", sc.tolerances.get("default")))
    d = rep.as_dict()
    lines = [f"euler-check {sc.fixture}: {'pass' if rep.passed else 'fail'}"]
    return d, rep.passed, None if rep.passed else "euler-condition-violated", lines, None


def _run_calibrate(sc: Scenario):
    from .calibration_builder import BuildError, GraphWindowError, calibrate
    from .calibration_verify import DEFAULT_TOLERANCES, derivative_identities
    from .fixtures import graph_domain
    from .steklov_capacity import rectangle_K

    cand, spec = _load(sc)
    variant = sc.opt("variant", "dirichlet")
    if variant not in ("dirichlet", "graph"):
        raise ScenarioError(f"variant must be 'dirichlet' or 'graph', got {variant!r}")
    grid_vals = _ints(sc.opt("grid", "64"), "grid")
    grid = (grid_vals[0], grid_vals[-1])
    st = _ints(sc.opt("st_samples", "64"), "st_samples")[0]
    unknown = set(sc.tolerances) - set(DEFAULT_TOLERANCES) - {"identity_first", "identity_second"}
    if unknown:
        raise ScenarioError(f"unknown tolerance(s): {', '.join(sorted(unknown))}")
    vtols = {k: v for k, v in sc.tolerances.items() if k in DEFAULT_TOLERANCES}
    capacity = outer = None
    if variant == "graph":
        try:
            l, outer = graph_domain(spec)
        except LookupError as exc:
            raise _FixtureFailure(str(exc)) from None
        capacity = rectangle_K(l, outer)
    try:
        res = calibrate(cand, variant, capacity=capacity, grid=grid, st_samples=st,
                        verify_kwargs={"tolerances": vtols}, outer_height=outer)
    except BuildError as exc:
        return ({"build_error": str(exc), "worst": exc.worst, "history": exc.history}, False,
                f"build-failed worst={exc.worst}", [f"calibrate-verify {sc.fixture}: build failed"], None)
    except GraphWindowError as exc:
        return ({"build_error": str(exc)}, False, "graph-window-empty", [str(exc)], None)
    ids = derivative_identities(res.field, cand, tol_first=sc.tolerances.get("identity_first", 1e-4),
                                tol_second=sc.tolerances.get("identity_second", 1e-4))
    rep = res.report
    payload = {"params": res.field.params.as_dict(), "manifest": res.field.manifest(),
               "verification": rep.as_dict(), "identities": ids.as_dict(), "history": res.history}
    ok = rep.passed and ids.passed
    lines = [f"calibrate-verify {sc.fixture} ({variant}): {'pass' if ok else 'fail'}"]
    lines += [f"  {name:<12} margin {m: .3e}" for name, m in sorted(rep.margins().items())]
    reason = None
    if not rep.passed:
        reason = f"condition-failed worst={rep.worst_condition()}"
    elif not ids.passed:
        reason = "identity-failed"
    return payload, ok, reason, lines, None


def _domain(sc: Scenario):
    from .steklov_capacity import PolygonDomain, RectangleDomain, half_neighbourhood

    kinds = [k for k in ("rect", "strip", "polygon") if k in sc.options]
    if len(kinds) != 1:
        raise ScenarioError("give exactly one of --rect, --strip, --polygon")
    kind = kinds[0]
    if kind == "rect":
        a, b = _floats(sc.opt("rect"), "rect", 2)
        if a <= 0 or b <= 0:
            raise ScenarioError("rect sides must be positive")
        return kind, RectangleDomain(a, b), (a, b)
    if kind == "strip":
        l, d = _floats(sc.opt("strip"), "strip", 2)
        if l <= 0 or d <= 0:
            raise ScenarioError("strip sizes must be positive")
        h = _float(sc.opt("h", repr(d / 8)), "h")
        return kind, half_neighbourhood(l, d, h=h), None
    pts = _floats(sc.opt("polygon"), "polygon")
    gam = _floats(sc.opt("gamma"), "gamma")
    if len(pts) % 2 or len(pts) < 6 or len(gam) % 2 or len(gam) < 4:
        raise ScenarioError("polygon and gamma take x,y pairs (at least 3 and 2 points)")
    verts = tuple(zip(pts[0::2], pts[1::2]))
    return kind, PolygonDomain(verts, tuple(zip(gam[0::2], gam[1::2]))), None


def _run_steklov(sc: Scenario):
    from .steklov_capacity import SteklovError, compute_K, rectangle_K

    kind, dom, rect = _domain(sc)
    h = _float(sc.opt("h", repr(1.0 / 64)), "h")
    try:
        res = compute_K(dom, h)
    except SteklovError as exc:
        return {"error": str(exc)}, False, "steklov-failed", [str(exc)], None
    payload = {"domain": kind, "result": res.as_dict()}
    lines = [f"K = {res.K:.6f} (h = {h:.6g}, richardson {res.K_richardson:.6f})"]
    ok, reason = bool(res.positive), None if res.positive else "eigenfunction-not-positive"
    if rect is not None:
        exact = rectangle_K(*rect)
        rel = abs(res.K - exact) / exact
        tol = sc.tolerances.get("default", sc.tolerances.get("relative", 0.01))
        payload["closed_form"] = {"K": exact, "relative_error": rel, "tol": tol, "passed": rel <= tol}
        lines.append(f"closed form pi/(a tanh(pi b/a)) = {exact:.6f}, relative error {rel:.3e} (tol {tol:g})")
        if rel > tol:
            ok, reason = False, f"closed-form-mismatch rel={rel:.3e}"
    return payload, ok, reason, lines, None


def _run_sufficient(sc: Scenario):
    from .steklov_capacity import RectangleDomain, SteklovError, TraceData, sufficient_condition

    c = _float(sc.opt("c", "78"), "c")
    if "counterexample_l" in sc.options:
        l = _float(sc.opt("counterexample_l"), "counterexample_l")
        if l <= 0:
            raise ScenarioError("counterexample_l must be positive")
        trace = TraceData(4 * l, 0.0, (1.0, 1.0))  # u = +-x on (1, 1 + 4l) x (-l, l)
        dom = RectangleDomain(4 * l, l, origin=(1.0, 0.0))
        label = f"u=+-x, l={l:g}"
    else:
        cand, spec = _load(sc)
        trace = TraceData.from_candidate(cand)
        if trace.k > 1e-12:
            raise ScenarioError("sufficient runs on straight fixtures (rectangular split)")
        height = _float(sc.opt("height", repr(spec.outer_height if spec.outer_height else 1.0)), "height")
        dom = RectangleDomain(trace.length, height)
        label = f"{sc.fixture}, height={height:g}"
    h = _float(sc.opt("h"), "h") if "h" in sc.options else None
    try:
        v = sufficient_condition(trace, dom, dom, c=c, h=h)
    except SteklovError as exc:
        raise ScenarioError(str(exc)) from None
    expect = sc.opt("expect")
    if expect not in (None, "pass", "fail"):
        raise ScenarioError("expect must be 'pass' or 'fail'")
    ok = True if expect is None else (v.passed == (expect == "pass"))
    lines = [f"sufficient ({label}): ratio {v.ratio:.6g} -> {'holds' if v.passed else 'fails'}"]
    return ({"verdict": v.as_dict(), "expect": expect}, ok, None if ok else f"unexpected-verdict {v.passed}",
            lines, None)


def _run_counterexample(sc: Scenario):
    from .counterexample import find_energy_decrease, solve_w0

    ratio = _float(sc.opt("l_over_c", "2.0"), "l_over_c")
    if ratio <= 0:
        raise ScenarioError("l_over_c must be positive")
    levels = _ints(sc.opt("levels", "4"), "levels")[0]
    mesh_h = _float(sc.opt("mesh_h", repr(1.0 / 128)), "mesh_h")
    w = solve_w0(mesh_h, levels=levels)
    res = find_energy_decrease(ratio * w.c, w, eps_max=_float(sc.opt("eps_max", "0.1"), "eps_max"),
                               halvings=_ints(sc.opt("halvings", "8"), "halvings")[0])
    payload = {"w0": w.as_dict(), "l_over_c": ratio, "result": res.as_dict()}
    lines = [f"c = {w.c:.6f} ({w.converged_digits:.1f} digits), l = {res.l:.6f}: {res.verdict}",
             f"slope dE/eps^2 = {res.slope:.6g}, expected 1/c - 1/l = {res.slope_expected:.6g}"]
    return payload, True, None, lines, [("eps", "delta_E")] + res.csv_rows()


def _run_blowup(sc: Scenario):
    from .steklov_capacity import blowup_study

    l = _float(sc.opt("l", "1.0"), "l")
    deltas = _floats(sc.opt("deltas", "0.5, 0.25, 0.125, 0.0625, 0.03125"), "deltas")
    cells = _ints(sc.opt("cells_per_delta", "8"), "cells_per_delta")[0]
    rows = blowup_study(l, deltas, cells_per_delta=cells)
    ks = [r.K for r in rows if r.K is not None]
    kd = [r.K_times_delta for r in rows if r.K_times_delta is not None]
    increasing = all(b > a for a, b in zip(ks, ks[1:]))
    floor = min(kd) if kd else math.nan
    ok = increasing and len(ks) >= 2 and floor > 0
    payload = {"rows": [r.as_dict() for r in rows], "strictly_increasing": increasing, "min_K_delta": floor}
    lines = [f"delta {r.delta:<10g} K {r.K if r.K is None else format(r.K, '.6f')}" for r in rows]
    lines.append(f"strictly increasing: {increasing}; min K*delta = {floor:.4f}")
    csv_rows = [("delta", "K", "K_times_delta")] + [(r.delta, r.K, r.K_times_delta) for r in rows]
    return payload, ok, None if ok else "blowup-not-monotone", lines, csv_rows


_DISPATCH = {
    "euler-check": _run_euler,
    "calibrate-verify": _run_calibrate,
    "steklov": _run_steklov,
    "sufficient": _run_sufficient,
    "counterexample": _run_counterexample,
    "blowup": _run_blowup,
}


@contextlib.contextmanager
def _thread_cap():
    """Honour ``CALIBRA_THREADS`` for the BLAS pools when threadpoolctl is available."""
    raw = os.environ.get("CALIBRA_THREADS")
    if not raw:
        yield
        return
    try:
        n = int(raw)
    except ValueError:
        raise ScenarioError(f"CALIBRA_THREADS must be an integer, got {raw!r}") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional dependency
        yield
        return
    with threadpool_limits(limits=max(1, n)):
        yield


@dataclass
class RunOutcome:
    code: int
    reason: str | None
    report: dict | None
    summary: list[str]
    csv_rows: list | None = None


def run_scenario(scenario: Scenario | str) -> RunOutcome:
    """Run a scenario (object or INI text) without touching the filesystem."""
    try:
        sc = parse_scenario(scenario) if isinstance(scenario, str) else scenario
        with _thread_cap():
            payload, ok, reason, lines, rows = _DISPATCH[sc.subcommand](sc)
    except ScenarioError as exc:
        return RunOutcome(2, f"parse-error {exc}", None, [])
    except _FixtureFailure as exc:
        return RunOutcome(3, f"fixture-error {exc}", None, [])
    report = {"schema_version": SCHEMA_VERSION, "scenario": sc.as_dict(), "passed": bool(ok),
              "reason": reason, "report": payload}
    return RunOutcome(0 if ok else 1, reason, report, lines, rows)


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one line, exit 2
        _fail(2, "parse-error " + " ".join(message.split()))


def _fail(code: int, reason: str):
    print(f"calibra: exit={code} reason={reason}", file=sys.stderr)
    raise SystemExit(code)


def _common(p: argparse.ArgumentParser, top: bool = False) -> None:
    # on subparsers the defaults are suppressed, so a value given before the
    # subcommand is not reset by the subparser
    d = {} if top else {"default": argparse.SUPPRESS}
    p.add_argument("--config", help="INI scenario file; flags override its [scenario] values", **d)
    p.add_argument("--fixture", help="fixture name (built-in or [fixture:<name>] in the config)", **d)
    p.add_argument("--tol", action="append", metavar="[NAME=]VALUE",
                   help="tolerance override; a bare value sets the subcommand's main tolerance", **d)
    p.add_argument("--grid", help="base grid, 'N' or 'NX,NY' (calibrate-verify)", **d)
    p.add_argument("--out", help="JSON report path ('-' for stdout)", **d)
    p.add_argument("--csv", help="CSV dump path (counterexample, blowup)", **d)
    p.add_argument("-v", "--verbose", action="store_true", **d)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="calibra", description="Calibration and capacity checks for Mumford-Shah candidates.")
    _common(top, top=True)
    sub = top.add_subparsers(dest="subcommand", parser_class=_Parser)
    p = sub.add_parser("euler-check", help="Euler conditions of a fixture")
    _common(p)
    p = sub.add_parser("calibrate-verify", help="build a calibration and verify (a)-(e)")
    _common(p)
    p.add_argument("--variant", choices=("dirichlet", "graph"))
    p.add_argument("--st-samples", type=int)
    p = sub.add_parser("steklov", help="Steklov-Dirichlet constant K")
    _common(p)
    p.add_argument("--rect", nargs=2, type=float, metavar=("A", "B"))
    p.add_argument("--strip", nargs=2, type=float, metavar=("L", "DELTA"), help="half-neighbourhood of a segment")
    p.add_argument("--polygon", help="x1,y1,x2,y2,... vertices")
    p.add_argument("--gamma", help="x1,y1,x2,y2,... polyline on the polygon boundary")
    p.add_argument("--h", type=float, help="mesh size")
    p = sub.add_parser("sufficient", help="capacity sufficient condition")
    _common(p)
    p.add_argument("--height", type=float, help="rectangle height on each side of a straight fixture")
    p.add_argument("--counterexample-l", type=float, help="use u=+-x on (1,1+4l)x(-l,l)")
    p.add_argument("--c", type=float, help="constant c (default 78)")
    p.add_argument("--h", type=float)
    p.add_argument("--expect", choices=("pass", "fail"))
    p = sub.add_parser("counterexample", help="energy decrease for u=+-x")
    _common(p)
    p.add_argument("--l-over-c", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--mesh-h", type=float)
    p.add_argument("--eps-max", type=float)
    p.add_argument("--halvings", type=int)
    p = sub.add_parser("blowup", help="K over shrinking half-neighbourhoods")
    _common(p)
    p.add_argument("--l", type=float)
    p.add_argument("--deltas", help="comma-separated delta values")
    p.add_argument("--cells-per-delta", type=int)
    return top


_COMMON = {"config", "fixture", "tol", "grid", "out", "csv", "verbose", "subcommand"}


def _scenario_from_args(args: argparse.Namespace) -> Scenario:
    cfg = configparser.ConfigParser(interpolation=None)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = _read_config(fh.read())
        except OSError as exc:
            raise ScenarioError(f"cannot read config: {exc.strerror}") from None
    sc = _scenario_from_config(cfg, args.subcommand)
    if args.fixture:
        sc.fixture = args.fixture
    if args.out:
        sc.out = args.out
    if args.csv:
        sc.csv = args.csv
    if args.grid:
        sc.options["grid"] = args.grid
    for item in args.tol or []:
        name, _, val = item.rpartition("=")
        sc.tolerances[name.strip() or "default"] = _float(val, "--tol")
    for key, val in sorted(vars(args).items()):
        if key in _COMMON or val is None:
            continue
        if isinstance(val, (list, tuple)):
            val = ", ".join(repr(float(v)) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        sc.options[key] = str(val)
    return sc


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        sc = _scenario_from_args(args)
    except ScenarioError as exc:
        _fail(2, f"parse-error {exc}")
    outcome = run_scenario(sc)
    if outcome.report is None:
        _fail(outcome.code, outcome.reason)
    stream = sys.stderr if sc.out == "-" else sys.stdout
    for line in outcome.summary:
        print(line, file=stream)
    try:
        if sc.out:
            _write(sc.out, dump_report(outcome.report))
        if sc.csv and outcome.csv_rows:
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerows(
                [[_fmt(v) for v in row] for row in outcome.csv_rows])
            _write(sc.csv, buf.getvalue())
    except OSError as exc:
        _fail(2, f"parse-error cannot write output: {exc.strerror}")
    if outcome.code:
        _fail(outcome.code, outcome.reason or "check-failed")
    return 0


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
