"""Candidates ``(u1, u2)`` across an analytic curve and their Euler conditions."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .analytic_kernel import HarmonicFunction, HolomorphicHarmonic
from .curve_geometry import CurveChart, parse_expression, sympy_jet

__all__ = [
    "Candidate",
    "EulerReport",
    "candidate_from_chart",
    "candidate_from_cartesian",
    "check_euler",
]


def _compose(F, chart: CurveChart):
    """Jet of ``F(Psi(zeta))`` from the jets of ``F`` and ``Psi``."""

    def jet(zeta, k):
        P = chart.curve.jet(zeta, k)
        f = F(P[0], k)
        out = [f[0]]
        if k >= 1:
            out.append(f[1] * P[1])
        if k >= 2:
            out.append(f[2] * P[1] ** 2 + f[1] * P[2])
        if k >= 3:
            out.append(f[3] * P[1] ** 3 + 3 * f[2] * P[1] * P[2] + f[1] * P[3])
        return tuple(out)

    return jet


@dataclass(frozen=True)
class Candidate:
    """Piecewise harmonic candidate: ``u1`` below the curve (``eta < 0``), ``u2`` above."""

    u1: HarmonicFunction
    u2: HarmonicFunction
    chart: CurveChart
    label: str = "candidate"
    shift: float = 0.0
    cartesian: tuple | None = field(default=None, repr=False)

    # -- traces on the curve ------------------------------------------------
    def sample_xi(self, n: int = 1025) -> np.ndarray:
        a, b = self.chart.curve.domain
        return np.linspace(a, b, n)

    def traces(self, xi) -> dict[str, np.ndarray]:
        """Values and first/second derivatives of both sides at ``eta = 0``."""
        xi = np.asarray(xi, float)
        z = np.zeros_like(xi)
        out = {}
        for i, u in ((1, self.u1), (2, self.u2)):
            gx, gy = u.grad(xi, z)
            hxx, hxy, hyy = u.hessian(xi, z)
            out[f"u{i}"] = u.value(xi, z)
            out[f"dxi{i}"] = gx
            out[f"deta{i}"] = gy
            out[f"dxixi{i}"] = hxx
            out[f"detaeta{i}"] = hyy
        return out

    def min_gap(self) -> float:
        t = self.traces(self.sample_xi())
        return float(np.min(t["u2"] - t["u1"]))

    def c1_norms(self) -> tuple[float, float]:
        """``||d_tau u_i||_{C^1}`` = sup|d_xi u_i| + sup|d_xixi u_i| along the curve."""
        t = self.traces(self.sample_xi(4097))
        return tuple(float(np.max(np.abs(t[f"dxi{i}"])) + np.max(np.abs(t[f"dxixi{i}"]))) for i in (1, 2))

    def normalized(self) -> "Candidate":
        """Shift both sides by a constant so that ``min u1(xi, 0) = 1``."""
        t = self.traces(self.sample_xi(4097))
        c = 1.0 - float(np.min(t["u1"]))
        if c == 0.0:
            return self
        if not (isinstance(self.u1, HolomorphicHarmonic) and isinstance(self.u2, HolomorphicHarmonic)):
            raise TypeError("normalization needs closed-form or continued sides")
        return replace(self, u1=self.u1.plus_constant(c), u2=self.u2.plus_constant(c), shift=self.shift + c)


def _holo_from_text(expr: str, symbol: str, constants: dict | None) -> HolomorphicHarmonic:
    e = parse_expression(expr, symbol, constants)
    return HolomorphicHarmonic(sympy_jet(e, symbol), "closed_form")


def candidate_from_chart(chart: CurveChart, g1: str, g2: str, *, constants: dict | None = None,
                         label: str = "candidate") -> Candidate:
    """Sides given as holomorphic expressions in the chart variable ``zeta``: ``u_i = Re g_i``."""
    return Candidate(_holo_from_text(g1, "zeta", constants), _holo_from_text(g2, "zeta", constants), chart, label)


def candidate_from_cartesian(chart: CurveChart, f1: str, f2: str, *, constants: dict | None = None,
                             label: str = "candidate") -> Candidate:
    """Sides given as holomorphic potentials in ``z = x + i y``: ``u_i = Re f_i(z)``.

    The chart representation is ``Re f_i(Psi(zeta))``, composed through the
    chain rule, so harmonicity and the traces are exact.
    """
    h1 = _holo_from_text(f1, "z", constants)
    h2 = _holo_from_text(f2, "z", constants)
    u1 = HolomorphicHarmonic(_compose(h1.jet, chart), "closed_form")
    u2 = HolomorphicHarmonic(_compose(h2.jet, chart), "closed_form")
    return Candidate(u1, u2, chart, label, cartesian=(h1, h2))


@dataclass(frozen=True)
class EulerReport:
    """Residual profiles of the three Euler conditions plus the standing hypotheses."""

    laplacian: float
    normal_derivative: float
    curvature_jump: float
    min_gap: float
    min_u1_normalized: float
    tol: float
    xi: np.ndarray = field(repr=False)
    profile_iii: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return (self.laplacian <= self.tol and self.normal_derivative <= self.tol
                and self.curvature_jump <= self.tol and self.min_gap > 0 and self.min_u1_normalized > 0)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "i_laplacian_residual": self.laplacian,
            "ii_normal_derivative": self.normal_derivative,
            "iii_curvature_jump": self.curvature_jump,
            "min_gap": self.min_gap,
            "min_u1_after_normalization": self.min_u1_normalized,
        }


def default_tol(candidate: Candidate) -> float:
    grid = any(getattr(u, "provenance", "") == "grid_interpolant" for u in (candidate.u1, candidate.u2))
    return 1e-5 if grid else 1e-8


def check_euler(candidate: Candidate, tol: float | None = None, *, n_xi: int = 257) -> EulerReport:
    """Residuals of harmonicity, the Neumann condition and the curvature balance.

    (i) is measured by a fourth-order finite-difference Laplacian of the value
    evaluator on a grid spanning the chart strip, so it also exercises
    grid-backed sides.  (ii) and (iii) use the exact derivative evaluators on
    ``n_xi`` points of the curve.
    """
    tol = default_tol(candidate) if tol is None else tol
    chart = candidate.chart
    a, b = chart.curve.domain
    xi = np.linspace(a, b, n_xi)
    H = chart.halfwidth
    XI, ETA = np.meshgrid(np.linspace(a, b, 33), np.linspace(-H, H, 9), indexing="ij")
    step = 0.25 * H
    lap = max(float(np.max(np.abs(u.laplacian_residual(XI, ETA, step)))) for u in (candidate.u1, candidate.u2))
    t = candidate.traces(xi)
    normal = float(max(np.max(np.abs(t["deta1"])), np.max(np.abs(t["deta2"]))))
    prof = t["dxi2"] ** 2 - t["dxi1"] ** 2 - chart.curvature(xi)
    gap = float(np.min(t["u2"] - t["u1"]))
    min_u1 = 1.0 if gap > 0 else float(np.min(t["u1"]))
    return EulerReport(lap, normal, float(np.max(np.abs(prof))), gap, min_u1, tol, xi, prof)
