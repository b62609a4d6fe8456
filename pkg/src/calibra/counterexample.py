"""Energy decrease for ``u = x`` above / ``-x`` below a long straight crack.

Geometry (``l`` the half-height of ``R = (1, 1 + 4l) x (-l, l)``):

* ``R_2 = (1, 1 + 4l) x (-l, 0)`` is the image of ``R_0 = (0, 4) x (-1, 0)``
  under ``(x, y) -> (1 + l x, l y)``; there ``u~ = -x + eta_amp v`` with
  ``v(x, y) = l w((x - 1)/l, y/l)``.
* ``T_eps`` is the triangle ``(1, 0), (1 + l, eps), (1 + 2l, 0)`` above the
  crack, where ``u~ = -x + eta_amp (x - 1)``.
* Everywhere else in the upper half ``u~ = x``.

The crack of ``u~`` runs over the two upper sides of ``T_eps`` and then along
``(1 + 2l, 1 + 4l) x {0}``.  Energies are reported as gains: positive numbers
mean that ``u~`` has lower Mumford-Shah energy than ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

__all__ = [
    "CounterexampleError",
    "W0Solution",
    "EnergyReport",
    "DecreaseResult",
    "solve_w0",
    "perturbed_energy",
    "find_energy_decrease",
    "expansion_gain",
]


class CounterexampleError(ValueError):
    """Degenerate perturbation parameters."""


@dataclass
class _GridP1:
    """P1 function on the structured triangulation of ``(0, 4) x (-1, 0)`` (diagonal from lower-left)."""

    nx: int
    ny: int
    values: np.ndarray  # (nx + 1, ny + 1); index j = 0 is y = -1

    @property
    def h(self) -> float:
        return 4.0 / self.nx

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        h = self.h
        s = np.clip(x / h, 0.0, self.nx)
        t = np.clip((y + 1.0) / h, 0.0, self.ny)
        i = np.minimum(np.floor(s).astype(int), self.nx - 1)
        j = np.minimum(np.floor(t).astype(int), self.ny - 1)
        a = s - i
        b = t - j
        V = self.values
        v00, v10, v01, v11 = V[i, j], V[i + 1, j], V[i, j + 1], V[i + 1, j + 1]
        lower = a >= b  # triangle (00, 10, 11)
        out_lower = v00 + a * (v10 - v00) + b * (v11 - v10)
        out_upper = v00 + b * (v01 - v00) + a * (v11 - v01)
        return np.where(lower, out_lower, out_upper)

    def cell_gradients(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Constant gradients on the two triangle families, each of shape ``(nx, ny, 2)``, and the triangle area."""
        V = self.values
        h = self.h
        v00, v10 = V[:-1, :-1], V[1:, :-1]
        v01, v11 = V[:-1, 1:], V[1:, 1:]
        g_low = np.stack([(v10 - v00) / h, (v11 - v10) / h], axis=-1)
        g_up = np.stack([(v11 - v01) / h, (v01 - v00) / h], axis=-1)
        return g_low, g_up, np.full(1, 0.5 * h * h)

    def energy(self) -> float:
        g_low, g_up, area = self.cell_gradients()
        return float(area[0] * (np.sum(g_low**2) + np.sum(g_up**2)))

    def integral_dx(self) -> float:
        g_low, g_up, area = self.cell_gradients()
        return float(area[0] * (np.sum(g_low[..., 0]) + np.sum(g_up[..., 0])))


def _solve_level(n: int) -> _GridP1:
    """P1 minimiser on ``R_0`` with ``n`` cells per unit length."""
    nx, ny = 4 * n, n
    h = 1.0 / n
    N = (nx + 1) * (ny + 1)
    idx = np.arange(N).reshape(nx + 1, ny + 1)
    xs = np.arange(nx + 1) * h
    # element stiffness for right triangles with legs h: same for both orientations
    tri_low = np.column_stack([idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel()])
    tri_up = np.column_stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()])
    tris = np.concatenate([tri_low, tri_up])
    X = np.column_stack([np.repeat(xs, ny + 1), np.tile(-1.0 + np.arange(ny + 1) * h, nx + 1)])
    p = X[tris]
    det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    g = np.stack([-e[..., 1], e[..., 0]], axis=-1) / det[:, None, None]
    Ke = 0.5 * np.abs(det)[:, None, None] * np.einsum("mik,mjk->mij", g, g)
    A = sparse.csr_matrix((Ke.ravel(), (np.repeat(tris, 3, axis=1).ravel(), np.tile(tris, (1, 3)).ravel())),
                          shape=(N, N))
    vals = np.zeros(N)
    fixed = np.zeros(N, bool)
    fixed[idx[0, :]] = fixed[idx[-1, :]] = fixed[idx[:, 0]] = True
    top = idx[:, -1]
    dir_top = xs <= 2.0 + 1e-12
    fixed[top[dir_top]] = True
    vals[top[dir_top]] = xs[dir_top]
    free = ~fixed
    rhs = -A[free][:, fixed] @ vals[fixed]
    vals[free] = spsolve(A[free][:, free].tocsc(), rhs)
    return _GridP1(nx, ny, vals.reshape(nx + 1, ny + 1))


@dataclass
class W0Solution:
    """Reference function ``w`` on ``R_0`` and its Dirichlet energy ``c``.

    ``c`` is the extrapolated value; ``c_levels`` lists the discrete energies
    on the refinement sequence, which decrease because the meshes are nested
    and the boundary data are exactly representable.
    """

    c: float
    c_levels: list[tuple[float, float]]
    order: float
    w: _GridP1 = field(repr=False)
    c_previous: float = math.nan

    @property
    def c_fine(self) -> float:
        return self.c_levels[-1][1]

    @property
    def converged_digits(self) -> float:
        """Agreement of the last two extrapolated values, in decimal digits."""
        return -math.log10(max(abs(self.c - self.c_previous) / self.c, 1e-16))

    def as_dict(self) -> dict:
        return {"c": self.c, "c_previous_extrapolation": self.c_previous, "c_fine": self.c_fine,
                "observed_order": self.order, "converged_digits": self.converged_digits,
                "levels": [{"h": h, "c_h": v} for h, v in self.c_levels]}


def _richardson(cs: list[float]) -> tuple[float, float]:
    """Two-stage table removing ``O(h)`` then ``O(h^2)``; returns the last two extrapolants."""
    r1 = [2 * b - a for a, b in zip(cs[:-1], cs[1:])]
    if len(r1) < 2:
        return r1[-1], cs[-1]
    r2 = [(4 * b - a) / 3 for a, b in zip(r1[:-1], r1[1:])]
    prev = r2[-2] if len(r2) >= 2 else r1[-1]
    return r2[-1], prev


def solve_w0(mesh_h: float = 1.0 / 128, *, levels: int = 4) -> W0Solution:
    """Minimise ``int_{R_0} |grad w|^2`` with ``w = x`` on ``(0, 2) x {0}``, ``w = 0`` on the other Dirichlet sides.

    ``(2, 4) x {0}`` carries the natural condition.  The switch between the
    two conditions at ``(2, 0)`` makes ``w`` behave like ``r^{1/2}``, so the
    energy error is ``O(h)``.  Energies on ``levels`` nested meshes ending at
    ``mesh_h`` feed a two-stage Richardson table (orders 1 and 2); the observed
    order is reported as a diagnostic.
    """
    n_fine = int(round(1.0 / mesh_h))
    ns = [n_fine // 2**k for k in range(levels - 1, -1, -1)]
    if levels < 3 or ns[0] < 2:
        raise ValueError("need at least three levels with two or more cells per unit")
    sols = [_solve_level(n) for n in ns]
    cs = [s.energy() for s in sols]
    d1, d2 = cs[-3] - cs[-2], cs[-2] - cs[-1]
    p = math.log2(d1 / d2) if d1 > 0 and d2 > 0 else math.nan
    c, prev = _richardson(cs)
    return W0Solution(c, [(1.0 / n, v) for n, v in zip(ns, cs)], p, sols[-1], prev)


@dataclass(frozen=True)
class EnergyReport:
    l: float
    eps: float
    eta_amp: float
    c: float
    term_length: float
    term_triangle: float
    term_R2: float
    c_discrete: float = math.nan

    @property
    def delta_E(self) -> float:
        return self.term_length + self.term_triangle + self.term_R2

    @property
    def decrease(self) -> bool:
        return self.delta_E > 0

    def as_dict(self) -> dict:
        return {"l": self.l, "eps": self.eps, "eta_amp": self.eta_amp, "c": self.c, "c_discrete": self.c_discrete,
                "term_length": float(self.term_length), "term_triangle": float(self.term_triangle),
                "term_R2": float(self.term_R2), "delta_E": float(self.delta_E), "decrease": bool(self.decrease)}


def _triangle_gain(l: float, eps: float, eta: float) -> float:
    """``int_T (|grad u|^2 - |grad u~|^2)`` over ``T_eps``.

    ``grad u = (1, 0)`` and ``grad u~ = (eta - 1, 0)`` are constant on the
    triangle, so the integrand is ``(2 - eta) eta``; written in that factored
    form it keeps full relative accuracy for small ``eta``.
    """
    verts = np.array([[1.0, 0.0], [1.0 + l, eps], [1.0 + 2 * l, 0.0]])
    e1, e2 = verts[1] - verts[0], verts[2] - verts[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    return float(area * (2.0 - eta) * eta)


def perturbed_energy(l: float, eps: float, eta_amp: float, w: W0Solution) -> EnergyReport:
    """Exact crack-length change, triangle term and quadrature of the ``R_2`` term.

    The ``R_2`` gain is ``-eta^2 int |grad v|^2 + 2 eta int d_x v`` evaluated on
    the rescaled mesh function; the second integral vanishes because ``v`` is
    zero on the vertical sides.
    """
    if not (0 < eps < l):
        raise CounterexampleError(f"need 0 < eps < l, got eps={eps}, l={l}")
    if not (0 <= eta_amp < 1):
        raise CounterexampleError(f"need 0 <= eta_amp < 1, got {eta_amp}")
    term_length = -2 * eps * eps / (l + math.hypot(l, eps))  # = 2l - 2 sqrt(l^2 + eps^2) without cancellation
    term_tri = _triangle_gain(l, eps, eta_amp)
    # v(x, y) = l w((x-1)/l, y/l): grad v = grad w(.), area element l^2
    grad_sq = l * l * w.w.energy()
    dx_int = l * l * w.w.integral_dx()
    term_R2 = -eta_amp**2 * grad_sq + 2.0 * eta_amp * dx_int
    return EnergyReport(l, eps, eta_amp, w.c, term_length, term_tri, term_R2, w.c_fine)


def expansion_gain(l: float, eps: float, eta_amp: float, c: float) -> float:
    """Second-order expansion ``-eps^2/l + 2 l eps eta - l eps eta^2 - c l^2 eta^2``."""
    return -eps * eps / l + 2 * l * eps * eta_amp - l * eps * eta_amp**2 - c * l * l * eta_amp**2


def perturbed_function(l: float, eps: float, eta_amp: float, w: W0Solution):
    """Callable ``(x, y) -> u~(x, y)``; on the crack the lower value is returned for ``y < 0`` only."""

    def tri_mask(x, y):
        peak = 1.0 + l
        top = np.where(x <= peak, eps * (x - 1.0) / l, eps * (1.0 + 2 * l - x) / l)
        return (y >= 0) & (x >= 1.0) & (x <= 1.0 + 2 * l) & (y <= top)

    def f(x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        v = l * w.w((x - 1.0) / l, np.minimum(y, 0.0) / l)
        below = -x + eta_amp * v
        tri = -x + eta_amp * (x - 1.0)
        return np.where(y < 0, below, np.where(tri_mask(x, y), tri, x))

    return f


@dataclass
class DecreaseResult:
    l: float
    c: float
    verdict: str  # "decrease-found" | "none-found"
    best: EnergyReport | None
    sweep: list[EnergyReport]
    slope: float
    slope_expected: float
    expansion_order: float

    def as_dict(self) -> dict:
        return {
            "l": self.l, "c": self.c, "verdict": self.verdict,
            "best": None if self.best is None else self.best.as_dict(),
            "fitted_slope": self.slope, "expected_slope": self.slope_expected,
            "slope_relative_error": abs(self.slope - self.slope_expected) / abs(self.slope_expected)
            if self.slope_expected else None,
            "expansion_order": self.expansion_order,
            "leading_order": self.leading_order,
            "sweep": [{"eps": r.eps, "eta_amp": r.eta_amp, "delta_E": float(r.delta_E)} for r in self.sweep],
        }

    @property
    def leading_order(self) -> str:
        """Sign of ``1/c - 1/l``: "gain", "loss", or "vanishes" when ``l`` is within 0.1% of ``c``."""
        if abs(self.l - self.c) <= 1e-3 * self.c:
            return "vanishes"
        return "gain" if self.slope_expected > 0 else "loss"

    def csv_rows(self) -> list[tuple[float, float]]:
        return [(r.eps, r.delta_E) for r in self.sweep]


def find_energy_decrease(l: float, w: W0Solution, *, eps_max: float = 0.1, halvings: int = 8,
                         c: float | None = None) -> DecreaseResult:
    """Sweep ``eps = eps_max 2^-k`` with ``eta_amp = eps / (c l)``; report the first strict decrease.

    ``c`` defaults to the mesh-converged value of :func:`solve_w0`; the
    ``R_2`` term is the quadrature of the finest discrete ``w``, whose own
    energy ``c_discrete`` is slightly larger.  The slope ``Delta E / eps^2`` is fitted by least squares of
    ``Delta E = s eps^2 + t eps^3`` over the sweep and compared with
    ``1/c - 1/l``.  The order of ``Delta E - expansion`` is fitted on the
    same sweep, with the expansion evaluated at ``c_discrete``.
    """
    c = w.c if c is None else float(c)
    eps_grid = eps_max * 0.5 ** np.arange(halvings + 1)
    sweep = [perturbed_energy(l, float(e), float(e) / (c * l), w) for e in eps_grid]
    best = next((r for r in sweep if r.decrease), None)
    E = np.array([r.delta_E for r in sweep])
    Amat = np.column_stack([eps_grid**2, eps_grid**3])
    coef, *_ = np.linalg.lstsq(Amat / eps_grid[:, None] ** 2, E / eps_grid**2, rcond=None)
    slope = float(coef[0])
    # the R_2 term integrates the discrete w, so the consistent expansion uses its energy
    diff = np.abs(E - np.array([expansion_gain(l, r.eps, r.eta_amp, r.c_discrete) for r in sweep]))
    # points whose remainder is at the rounding level of the summed terms carry no order information
    scale = np.array([abs(r.term_length) + abs(r.term_triangle) + abs(r.term_R2) for r in sweep])
    ok = diff > 1e3 * np.finfo(float).eps * scale
    order = float(np.polyfit(np.log(eps_grid[ok]), np.log(diff[ok]), 1)[0]) if ok.sum() >= 2 else math.inf
    return DecreaseResult(l, c, "decrease-found" if best is not None else "none-found", best, sweep, slope,
                          1.0 / c - 1.0 / l, order)
