"""Named fixtures and INI-described candidates.

A fixture section looks like::

    [fixture]
    curve = closed_form            ; or "series"
    x = R*cos(0.5 - t/R)
    y = R*sin(0.5 - t/R)
    domain = 0, 1
    reverse = false                ; flips the orientation (swaps the sides)
    side_coords = cartesian        ; "chart" for expressions in zeta
    u1 = 1
    u2 = -I*sqrt(R)*log(z) + 3
    constants = R: 1.0

Series curves give ``cx`` and ``cy`` (comma-separated Chebyshev
coefficients) instead of ``x``/``y``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .curve_geometry import (
    arc_length_reparameterize,
    build_chart,
    closed_form_curve,
    series_curve,
)
from .euler_check import Candidate, candidate_from_cartesian, candidate_from_chart

__all__ = ["FixtureError", "FixtureSpec", "BUILTIN", "load_fixture", "fixture_from_section", "graph_domain"]


class FixtureError(LookupError):
    """Unknown fixture or malformed fixture description."""


@dataclass(frozen=True)
class FixtureSpec:
    curve: str
    domain: tuple[float, float]
    u1: str
    u2: str
    side_coords: str = "chart"
    x: str = ""
    y: str = ""
    cx: tuple[float, ...] = ()
    cy: tuple[float, ...] = ()
    reverse: bool = False
    constants: tuple[tuple[str, float], ...] = ()
    halfwidth: float | None = None
    # rectangle (0, l) x (-b, b) around a straight curve, used by the graph variant
    outer_height: float | None = None

    def as_section(self) -> dict[str, str]:
        out = {"curve": self.curve, "domain": f"{self.domain[0]!r}, {self.domain[1]!r}", "u1": self.u1,
               "u2": self.u2, "side_coords": self.side_coords, "reverse": str(self.reverse).lower()}
        if self.curve == "closed_form":
            out["x"], out["y"] = self.x, self.y
        else:
            out["cx"] = ", ".join(repr(c) for c in self.cx)
            out["cy"] = ", ".join(repr(c) for c in self.cy)
        if self.constants:
            out["constants"] = ", ".join(f"{k}: {v!r}" for k, v in self.constants)
        if self.halfwidth is not None:
            out["halfwidth"] = repr(self.halfwidth)
        if self.outer_height is not None:
            out["outer_height"] = repr(self.outer_height)
        return out


BUILTIN: dict[str, FixtureSpec] = {
    # u = 1 below and 3 above the segment [0, 1] x {0}.
    "pure_jump_line": FixtureSpec("closed_form", (0.0, 1.0), "1", "3", x="t", y="0"),
    # Clockwise unit arc: the normal points outward, so u2 = sqrt(R) theta + 3 lives outside.
    "circle_arc": FixtureSpec(
        "closed_form", (0.0, 1.0), "1", "-I*sqrt(R)*log(z) + 3", side_coords="cartesian",
        x="R*cos(1/2 - t/R)", y="R*sin(1/2 - t/R)", constants=(("R", 1.0),)),
    # Equal tangential slopes on both sides; the jump is constant.
    "graph_line": FixtureSpec(
        "closed_form", (0.0, 1.0), "1 + a*z", "3 + a*z", side_coords="cartesian", x="t", y="0",
        constants=(("a", 0.01),), outer_height=0.1),
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _constants(text: str) -> tuple[tuple[str, float], ...]:
    out = []
    for item in text.split(","):
        if not item.strip():
            continue
        if ":" not in item:
            raise FixtureError(f"constant entry {item.strip()!r} is not 'name: value'")
        k, v = item.split(":", 1)
        out.append((k.strip(), float(v)))
    return tuple(out)


def fixture_from_section(section) -> FixtureSpec:
    """:class:`FixtureSpec` from an INI section (mapping of strings)."""
    try:
        curve = section.get("curve", "closed_form").strip()
        dom = _floats(section["domain"])
        if len(dom) != 2:
            raise FixtureError("domain needs two numbers")
        kw = dict(
            curve=curve, domain=(dom[0], dom[1]), u1=section["u1"].strip(), u2=section["u2"].strip(),
            side_coords=section.get("side_coords", "chart").strip(),
            reverse=section.get("reverse", "false").strip().lower() in ("1", "true", "yes", "on"),
            constants=_constants(section.get("constants", "")),
            halfwidth=float(section["halfwidth"]) if section.get("halfwidth") else None,
            outer_height=float(section["outer_height"]) if section.get("outer_height") else None,
        )
        if curve == "closed_form":
            kw.update(x=section["x"].strip(), y=section["y"].strip())
        elif curve == "series":
            kw.update(cx=_floats(section["cx"]), cy=_floats(section["cy"]))
        else:
            raise FixtureError(f"unknown curve kind {curve!r}")
    except KeyError as exc:
        raise FixtureError(f"fixture section lacks key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise FixtureError(str(exc)) from None
    if kw["side_coords"] not in ("chart", "cartesian"):
        raise FixtureError(f"side_coords must be 'chart' or 'cartesian', got {kw['side_coords']!r}")
    return FixtureSpec(**kw)


def build_candidate(spec: FixtureSpec, label: str = "fixture") -> Candidate:
    consts = dict(spec.constants)
    if spec.curve == "closed_form":
        curve = closed_form_curve(spec.x, spec.y, spec.domain, constants=consts, label=label)
    else:
        curve = series_curve(spec.cx, spec.cy, spec.domain, label=label)
    if spec.reverse:
        curve = curve.reversed()
    curve = arc_length_reparameterize(curve)
    chart = build_chart(curve, spec.halfwidth)
    make = candidate_from_cartesian if spec.side_coords == "cartesian" else candidate_from_chart
    return make(chart, spec.u1, spec.u2, constants=consts, label=label)


def load_fixture(name: str, config: configparser.ConfigParser | None = None) -> tuple[Candidate, FixtureSpec]:
    """Resolve ``name`` from ``[fixture:<name>]`` in ``config`` first, then the built-in table."""
    if config is not None and config.has_section(f"fixture:{name}"):
        spec = fixture_from_section(config[f"fixture:{name}"])
    elif name in BUILTIN:
        spec = BUILTIN[name]
    else:
        raise FixtureError(f"unknown fixture {name!r}; built-ins: {', '.join(sorted(BUILTIN))}")
    return build_candidate(spec, name), spec


def graph_domain(spec: FixtureSpec) -> tuple[float, float]:
    """``(l, b)`` of the rectangle ``(0, l) x (-b, b)`` used by the graph variant."""
    if spec.outer_height is None:
        raise FixtureError("fixture has no outer rectangle (set outer_height)")
    return spec.domain[1] - spec.domain[0], spec.outer_height
