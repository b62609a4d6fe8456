"""Analytic planar curves, arc-length reparameterization and the conformal strip chart.

A curve is stored as a complex "jet": a callable returning ``z(t)`` and its
first three derivatives, where ``z = x + i y``.  Because ``x`` and ``y`` are
analytic, the same callable evaluated at a complex parameter gives the
holomorphic continuation, and for an arc-length parameterization the map
``Psi(xi + i eta)`` is exactly the conformal chart that flattens the curve onto
``eta = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import sympy
from numpy.polynomial import Chebyshev
from scipy import integrate, optimize, spatial

from ._cheb import adaptive_interpolate, chop, ellipse_halfwidth, lobatto_coefficients, lobatto_nodes

__all__ = [
    "AnalyticCurve",
    "CurveChart",
    "CurvatureProfile",
    "CurveError",
    "ChartError",
    "closed_form_curve",
    "series_curve",
    "arc_length_reparameterize",
    "curvature_profile",
    "build_chart",
    "to_cartesian",
]

Jet = Callable[[np.ndarray, int], tuple]


class CurveError(ValueError):
    """Raised for curves that violate regularity or simplicity."""


class ChartError(ValueError):
    """Raised when a strip chart cannot be built at the requested halfwidth."""


_SYMPY_NAMES = {
    "pi": sympy.pi,
    "E": sympy.E,
    "I": sympy.I,
    "sqrt": sympy.sqrt,
    "exp": sympy.exp,
    "log": sympy.log,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "tan": sympy.tan,
    "sinh": sympy.sinh,
    "cosh": sympy.cosh,
    "tanh": sympy.tanh,
    "atan": sympy.atan,
}


def parse_expression(text: str, symbol: str, constants: dict[str, float] | None = None) -> sympy.Expr:
    """Parse ``text`` as a sympy expression in ``symbol`` using a fixed namespace."""
    names = dict(_SYMPY_NAMES)
    var = sympy.Symbol(symbol)
    names[symbol] = var
    for key, val in (constants or {}).items():
        names[key] = sympy.nsimplify(val) if isinstance(val, int) else sympy.Float(val, 30)
    try:
        expr = sympy.sympify(text, locals=names)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc
    extra = expr.free_symbols - {var}
    if extra:
        raise ValueError(f"expression {text!r} has unknown symbols {sorted(map(str, extra))}")
    return expr


def sympy_jet(expr: sympy.Expr, symbol: str, order: int = 3) -> Jet:
    """Lambdify ``expr`` and its derivatives into a vectorized complex jet."""
    var = sympy.Symbol(symbol)
    ders = [expr]
    for _ in range(order):
        ders.append(sympy.diff(ders[-1], var))
    funcs = [sympy.lambdify(var, d, modules="numpy") for d in ders]

    def jet(t: np.ndarray, k: int) -> tuple:
        t = np.asarray(t, dtype=complex)
        out = []
        for f in funcs[: k + 1]:
            val = np.asarray(f(t), dtype=complex)
            out.append(np.broadcast_to(val, t.shape).copy())
        return tuple(out)

    return jet


def chebyshev_jet(cheb: Chebyshev) -> Jet:
    ders = [cheb, cheb.deriv(1), cheb.deriv(2), cheb.deriv(3)]

    def jet(t: np.ndarray, k: int) -> tuple:
        t = np.asarray(t, dtype=complex)
        return tuple(np.asarray(d(t), dtype=complex) for d in ders[: k + 1])

    return jet


@dataclass(frozen=True)
class AnalyticCurve:
    """An analytic planar curve ``t -> x(t) + i y(t)`` on a real interval.

    ``radius`` is the halfwidth (in parameter units) of the strip around the
    real axis on which the continuation is trusted.  The normal used
    everywhere is ``nu = (-y', x')``.
    """

    jet: Jet
    domain: tuple[float, float]
    radius: float = np.inf
    provenance: str = "closed_form"
    label: str = ""
    unit_speed: bool = False

    def point(self, t) -> np.ndarray:
        return self.jet(np.asarray(t), 0)[0]

    def derivatives(self, t, order: int = 3) -> tuple:
        return self.jet(np.asarray(t), order)

    def speed(self, t) -> np.ndarray:
        return np.abs(self.jet(np.asarray(t, dtype=float), 1)[1])

    @cached_property
    def length(self) -> float:
        a, b = self.domain
        if self.unit_speed:
            return float(b - a)
        val, _ = integrate.quad(lambda s: float(self.speed(s)), a, b, epsabs=1e-14, epsrel=1e-13, limit=400)
        return float(val)

    def reversed(self) -> "AnalyticCurve":
        """Same trace, opposite orientation (swaps the two sides of the curve)."""
        a, b = self.domain
        base = self.jet

        def jet(t, k):
            vals = base(a + b - np.asarray(t, dtype=complex), k)
            return tuple(v * (-1) ** j for j, v in enumerate(vals))

        return AnalyticCurve(jet, self.domain, self.radius, self.provenance, self.label + "[reversed]", self.unit_speed)

    def moved(self, angle: float, shift: complex = 0.0) -> "AnalyticCurve":
        """Rigid motion ``z -> exp(i angle) z + shift``."""
        rot = np.exp(1j * angle)
        base = self.jet

        def jet(t, k):
            vals = base(t, k)
            return tuple(rot * v + (shift if j == 0 else 0.0) for j, v in enumerate(vals))

        return AnalyticCurve(jet, self.domain, self.radius, self.provenance, self.label, self.unit_speed)


def closed_form_curve(
    x: str,
    y: str,
    domain: Sequence[float],
    *,
    radius: float = np.inf,
    constants: dict[str, float] | None = None,
    label: str = "",
) -> AnalyticCurve:
    """Curve from closed-form expressions in ``t`` (sympy syntax)."""
    ex = parse_expression(x, "t", constants)
    ey = parse_expression(y, "t", constants)
    jet = sympy_jet(ex + sympy.I * ey, "t")
    return AnalyticCurve(jet, (float(domain[0]), float(domain[1])), float(radius), "closed_form", label or f"({x}, {y})")


def series_curve(cx: Sequence[float], cy: Sequence[float], domain: Sequence[float], *, label: str = "") -> AnalyticCurve:
    """Curve from Chebyshev coefficients of ``x`` and ``y`` on ``domain``."""
    dom = (float(domain[0]), float(domain[1]))
    n = max(len(cx), len(cy))
    coef = np.zeros(n, dtype=complex)
    coef[: len(cx)] += np.asarray(cx, dtype=float)
    coef[: len(cy)] += 1j * np.asarray(cy, dtype=float)
    cheb = Chebyshev(coef, domain=list(dom))
    radius = min(ellipse_halfwidth(Chebyshev(np.real(coef), domain=list(dom))),
                 ellipse_halfwidth(Chebyshev(np.imag(coef), domain=list(dom))))
    return AnalyticCurve(chebyshev_jet(cheb), dom, radius, "series", label or "chebyshev series")


def _check_regular(curve: AnalyticCurve, n: int = 4097) -> np.ndarray:
    a, b = curve.domain
    t = np.linspace(a, b, n)
    sp = curve.speed(t)
    j = int(np.argmin(sp))
    if not np.all(np.isfinite(sp)) or sp[j] <= 1e-12 * max(np.max(sp), 1.0):
        raise CurveError(f"curve is not regular: speed {sp[j]:.3e} at t={t[j]:.12g}")
    return sp


def _composed_jet(base: Jet, tder: list[Chebyshev]) -> Jet:
    """Jet of ``z(T(s))`` by the chain rule up to third order."""

    def jet(s, k):
        s = np.asarray(s, dtype=complex)
        T = [d(s) for d in tder[: max(k, 0) + 1]]
        z = base(T[0], k)
        out = [z[0]]
        if k >= 1:
            out.append(z[1] * T[1])
        if k >= 2:
            out.append(z[2] * T[1] ** 2 + z[1] * T[2])
        if k >= 3:
            out.append(z[3] * T[1] ** 3 + 3 * z[2] * T[1] * T[2] + z[1] * T[3])
        return tuple(out)

    return jet


def arc_length_reparameterize(curve: AnalyticCurve, tol: float = 1e-10) -> AnalyticCurve:
    """Return the same curve parameterized by arc length on ``[0, l]``.

    Constant-speed curves get an exact affine rescale.  Otherwise the arc
    length ``s(t)`` is built as a Chebyshev antiderivative of the speed, the
    inverse ``t(s)`` is interpolated spectrally, and the curve is composed
    with it, so the result is still analytic and complex-evaluable.
    """
    if curve.unit_speed and curve.domain[0] == 0.0:
        return curve
    sp = _check_regular(curve)
    a, b = curve.domain
    if np.ptp(sp) <= 0.1 * tol * np.mean(sp):
        v = float(np.mean(sp))
        base = curve.jet

        def jet(s, k):
            vals = base(a + np.asarray(s, dtype=complex) / v, k)
            return tuple(val / v**j for j, val in enumerate(vals))

        return AnalyticCurve(jet, (0.0, v * (b - a)), curve.radius * v, curve.provenance,
                             curve.label, unit_speed=True)

    speed_c = adaptive_interpolate(lambda t: curve.speed(t), (a, b), max_deg=2048, rel=1e-16)
    s_of_t = speed_c.integ(lbnd=a)
    total = float(s_of_t(b))

    def invert(s: np.ndarray) -> np.ndarray:
        t = a + (b - a) * np.asarray(s) / total
        for _ in range(60):
            step = (s_of_t(t) - s) / curve.speed(t)
            t = np.clip(t - step, a, b)
            if np.max(np.abs(step)) < 1e-15 * (b - a):
                break
        return t

    base = curve.jet
    s = np.linspace(0.0, total, 1001)
    err = np.inf
    for deg in (32, 64, 128, 256, 512, 1024):
        t_of_s = Chebyshev(chop(lobatto_coefficients(invert(lobatto_nodes(deg, (0.0, total))))),
                           domain=[0.0, total])
        tder = [t_of_s, t_of_s.deriv(1), t_of_s.deriv(2), t_of_s.deriv(3)]
        new = AnalyticCurve(_composed_jet(base, tder), (0.0, total), 0.0,
                            curve.provenance + "+arclength", curve.label, unit_speed=True)
        err = float(np.max(np.abs(np.abs(new.jet(s, 1)[1]) - 1.0)))
        if err <= 0.1 * tol:
            break
    if err > tol:
        raise CurveError(f"arc-length reparameterization reached only |speed-1| = {err:.2e} > {tol:.1e}")
    radius = min(ellipse_halfwidth(t_of_s), curve.radius * float(np.min(sp)))
    new = AnalyticCurve(new.jet, new.domain, radius, new.provenance, new.label, unit_speed=True)
    return new


@dataclass(frozen=True)
class CurvatureProfile:
    """Signed curvature ``curv(xi) = -(x'', y'') . nu`` of an arc-length curve."""

    curve: AnalyticCurve
    k: float
    curvq_residual: float

    def __call__(self, xi) -> np.ndarray:
        z1, z2 = self.curve.jet(np.asarray(xi, dtype=float), 2)[1:]
        return np.imag(np.conj(z2) * z1)

    def derivative(self, xi) -> np.ndarray:
        z1, _, z3 = self.curve.jet(np.asarray(xi, dtype=float), 3)[1:]
        return np.imag(np.conj(z3) * z1)


def curvature_profile(curve: AnalyticCurve) -> CurvatureProfile:
    """Curvature along an arc-length curve, its sup ``k`` and the self-consistency residual."""
    if not curve.unit_speed:
        raise CurveError("curvature_profile expects an arc-length parameterized curve")
    a, b = curve.domain
    xi = np.linspace(a, b, 4097)
    z1, z2 = curve.jet(xi, 2)[1:]
    curv = np.imag(np.conj(z2) * z1)
    residual = float(np.max(np.abs(curv**2 - np.abs(z2) ** 2)))
    j = int(np.argmax(np.abs(curv)))
    k = float(abs(curv[j]))
    lo, hi = xi[max(j - 1, 0)], xi[min(j + 1, xi.size - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda s: -abs(float(np.imag(np.conj(curve.jet(s, 2)[2]) * curve.jet(s, 2)[1]))),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
        )
        k = max(k, -float(res.fun))
    return CurvatureProfile(curve, k, residual)


@dataclass(frozen=True)
class CurveChart:
    """Conformal coordinates ``(xi, eta)`` on a strip around an arc-length curve."""

    curve: AnalyticCurve
    halfwidth: float
    curvature: CurvatureProfile = field(repr=False)

    @property
    def length(self) -> float:
        return self.curve.domain[1] - self.curve.domain[0]

    def psi(self, xi, eta, order: int = 0) -> tuple:
        """``Psi`` and its complex derivatives at ``xi + i eta``."""
        zeta = np.asarray(xi, dtype=float) + 1j * np.asarray(eta, dtype=float)
        return self.curve.jet(zeta, order)

    def inverse(self, xi, eta) -> tuple[np.ndarray, np.ndarray]:
        z = self.psi(xi, eta)[0]
        return z.real, z.imag

    def gamma(self, xi, eta) -> np.ndarray:
        return np.abs(self.psi(xi, eta, 1)[1])

    def tangents(self, xi, eta) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate vectors ``tau_xi`` and ``tau_eta`` (each of length ``gamma``)."""
        d = self.psi(xi, eta, 1)[1]
        tau_xi = np.stack([d.real, d.imag], axis=-1)
        tau_eta = np.stack([-d.imag, d.real], axis=-1)
        return tau_xi, tau_eta

    def grad_xi_sq(self, xi, eta) -> np.ndarray:
        """``|grad xi|^2`` evaluated at ``Psi(xi, eta)``, which equals ``1/gamma^2``."""
        return 1.0 / self.gamma(xi, eta) ** 2

    @cached_property
    def _seed(self) -> tuple[np.ndarray, np.ndarray, spatial.cKDTree]:
        a, b = self.curve.domain
        s = np.linspace(a, b, 2049)
        z, d = self.curve.jet(s, 1)
        tree = spatial.cKDTree(np.column_stack([z.real, z.imag]))
        return s, d, tree

    def forward(self, x, y, *, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
        """Chart coordinates of Cartesian points by Newton's method on ``Psi``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        p = (x + 1j * y).ravel()
        s, d, tree = self._seed
        _, idx = tree.query(np.column_stack([p.real, p.imag]))
        z0 = self.curve.jet(s[idx], 0)[0]
        diff = (p - z0) * np.conj(d[idx])  # components along tau and nu
        zeta = s[idx] + diff.real + 1j * diff.imag
        for _ in range(50):
            z, dz = self.curve.jet(zeta, 1)
            step = (z - p) / dz
            zeta = zeta - step
            if np.max(np.abs(step), initial=0.0) < tol * max(1.0, self.length):
                break
        return zeta.real.reshape(x.shape), zeta.imag.reshape(x.shape)


def _default_halfwidth(curve: AnalyticCurve) -> float:
    length = curve.domain[1] - curve.domain[0]
    return float(min(0.25 * curve.radius, 0.1 * length))


def build_chart(curve: AnalyticCurve, halfwidth: float | None = None, *, check_injective: bool = True) -> CurveChart:
    """Build the strip chart ``Psi(xi + i eta)`` of an arc-length parameterized curve.

    Injectivity is checked on a sampled grid: ``xi`` spacing ``2**-12 * l`` and
    nine ``eta`` levels.  Two samples whose images are much closer than their
    chart distance allows are reported as an overlap witness.
    """
    if not curve.unit_speed:
        raise ChartError("build_chart needs an arc-length parameterized curve")
    h = _default_halfwidth(curve) if halfwidth is None else float(halfwidth)
    if not h > 0:
        raise ChartError(f"halfwidth must be positive, got {h}")
    if h >= curve.radius:
        raise ChartError(f"halfwidth {h:.4g} exceeds the validated continuation radius {curve.radius:.4g}")
    a, b = curve.domain
    length = b - a
    xi = np.linspace(a, b, 2**12 + 1)
    eta = np.linspace(-h, h, 9)
    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    z, dz = curve.jet(XI + 1j * ETA, 1)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(dz))):
        raise ChartError("continuation is not finite on the strip")
    gam = np.abs(dz)
    if gam.min() <= 1e-8:
        i, j = np.unravel_index(np.argmin(gam), gam.shape)
        raise ChartError(f"Psi' vanishes near (xi, eta) = ({XI[i, j]:.6g}, {ETA[i, j]:.6g})")
    if check_injective:
        pts = np.column_stack([z.real.ravel(), z.imag.ravel()])
        dxi = length * 2.0**-12
        deta = 2 * h / 8
        r = 0.25 * gam.min() * min(dxi, deta)
        pairs = spatial.cKDTree(pts).query_pairs(r, output_type="ndarray")
        if len(pairs):
            zi = (XI + 1j * ETA).ravel()
            far = np.abs(zi[pairs[:, 0]] - zi[pairs[:, 1]]) > 2 * max(dxi, deta)
            if np.any(far):
                p, q = pairs[np.argmax(far)]
                raise ChartError(
                    "chart is not injective: "
                    f"({zi[p].real:.6g}, {zi[p].imag:.6g}) and ({zi[q].real:.6g}, {zi[q].imag:.6g}) overlap"
                )
    return CurveChart(curve, h, curvature_profile(curve))


def to_cartesian(value, chart: CurveChart, xi, eta) -> np.ndarray:
    """Map chart components ``(phi^xi, phi^eta, phi^z)`` to the Cartesian field.

    Returns ``(phi^xi tau_xi + phi^eta tau_eta + phi^z e_z) / gamma^2`` with the
    last axis holding ``(x, y, z)`` components.
    """
    value = np.asarray(value, dtype=float)
    d = chart.psi(xi, eta, 1)[1]
    g2 = np.abs(d) ** 2
    fx, fe, fz = value[..., 0], value[..., 1], value[..., 2]
    cx = (fx * d.real - fe * d.imag) / g2
    cy = (fx * d.imag + fe * d.real) / g2
    return np.stack([cx, cy, fz / g2], axis=-1)
