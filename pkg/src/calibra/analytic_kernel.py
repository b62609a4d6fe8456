"""Numerical engine: harmonic continuation, transport along characteristics, z-quadrature.

Harmonic functions on the chart strip are represented as real parts of
holomorphic functions of ``zeta = xi + i eta``; the Cauchy problem for the
Laplacian then reduces to building one holomorphic function from its values
on the real axis.  First-order transport equations are solved by integrating a
bundle of characteristics with an embedded Runge-Kutta method and
interpolating spectrally across the bundle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Chebyshev
from numpy.polynomial import chebyshev as npcheb
from scipy import interpolate
from scipy.integrate import solve_ivp

from ._cheb import adaptive_interpolate, ellipse_halfwidth, lobatto_coefficients, lobatto_nodes

__all__ = [
    "KernelError",
    "DomainShrink",
    "HarmonicFunction",
    "HolomorphicHarmonic",
    "GridHarmonic",
    "as_chebyshev",
    "harmonic_from_cauchy",
    "TransportSolution",
    "solve_transport",
    "FlowMap",
    "flow_pq",
    "PiecewiseAffineColumn",
    "vertical_quadrature",
]

HoloJet = Callable[[np.ndarray, int], tuple]


class KernelError(ValueError):
    """Raised when a kernel precondition fails (radius, characteristic direction, ...)."""


class DomainShrink(KernelError):
    """A characteristic left the admissible region: the strip must shrink."""


class HarmonicFunction:
    """Interface for harmonic functions on a strip: value, gradient, Hessian."""

    provenance: str = "abstract"

    def value(self, xi, eta) -> np.ndarray:
        raise NotImplementedError

    def grad(self, xi, eta) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def hessian(self, xi, eta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __call__(self, xi, eta) -> np.ndarray:
        return self.value(xi, eta)

    def laplacian_residual(self, xi, eta, step: float) -> np.ndarray:
        """Five-point Laplacian of ``value`` with one Richardson step (order four)."""

        def lap(h):
            u0 = self.value(xi, eta)
            return (self.value(xi + h, eta) + self.value(xi - h, eta) + self.value(xi, eta + h)
                    + self.value(xi, eta - h) - 4.0 * u0) / h**2

        return (4.0 * lap(step / 2) - lap(step)) / 3.0


class HolomorphicHarmonic(HarmonicFunction):
    """``u = Re F(xi + i eta)`` for a holomorphic ``F`` given as a jet."""

    def __init__(self, jet: HoloJet, provenance: str = "closed_form", radius: float = np.inf):
        self.jet = jet
        self.provenance = provenance
        self.radius = radius

    def _eval(self, xi, eta, k):
        zeta = np.asarray(xi, dtype=float) + 1j * np.asarray(eta, dtype=float)
        return self.jet(zeta, k)

    def value(self, xi, eta):
        return self._eval(xi, eta, 0)[0].real

    def conjugate(self, xi, eta):
        """Harmonic conjugate ``Im F``."""
        return self._eval(xi, eta, 0)[0].imag

    def grad(self, xi, eta):
        d = self._eval(xi, eta, 1)[1]
        return d.real, -d.imag

    def hessian(self, xi, eta):
        d2 = self._eval(xi, eta, 2)[2]
        return d2.real, -d2.imag, -d2.real

    def third(self, xi, eta):
        """``(u_xixixi, u_xixieta)``; the rest follow from harmonicity."""
        d3 = self._eval(xi, eta, 3)[3]
        return d3.real, -d3.imag

    def plus_constant(self, c: float) -> "HolomorphicHarmonic":
        base = self.jet

        def jet(z, k):
            vals = base(z, k)
            return (vals[0] + c,) + tuple(vals[1:])

        return HolomorphicHarmonic(jet, self.provenance, self.radius)

    def scaled(self, a: float) -> "HolomorphicHarmonic":
        base = self.jet
        return HolomorphicHarmonic(lambda z, k: tuple(a * v for v in base(z, k)), self.provenance, self.radius)

    def __add__(self, other: "HolomorphicHarmonic") -> "HolomorphicHarmonic":
        f, g = self.jet, other.jet
        return HolomorphicHarmonic(lambda z, k: tuple(a + b for a, b in zip(f(z, k), g(z, k))),
                                   f"{self.provenance}+{other.provenance}", min(self.radius, other.radius))


class GridHarmonic(HarmonicFunction):
    """Harmonic function known on a tensor grid, interpolated by quintic splines."""

    def __init__(self, xi: np.ndarray, eta: np.ndarray, values: np.ndarray):
        self.spline = interpolate.RectBivariateSpline(xi, eta, values, kx=5, ky=5, s=0)
        self.provenance = "grid_interpolant"

    def _ev(self, xi, eta, dx, dy):
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        return self.spline.ev(xi.ravel(), eta.ravel(), dx=dx, dy=dy).reshape(xi.shape)

    def value(self, xi, eta):
        return self._ev(xi, eta, 0, 0)

    def grad(self, xi, eta):
        return self._ev(xi, eta, 1, 0), self._ev(xi, eta, 0, 1)

    def hessian(self, xi, eta):
        return self._ev(xi, eta, 2, 0), self._ev(xi, eta, 1, 1), self._ev(xi, eta, 0, 2)


def as_chebyshev(f, domain: tuple[float, float]) -> Chebyshev:
    """Accept a Chebyshev series or a vectorized callable and return a series on ``domain``."""
    if isinstance(f, Chebyshev):
        return f
    if np.isscalar(f):
        return Chebyshev([float(f)], domain=list(domain))
    return adaptive_interpolate(lambda x: np.asarray(f(x), dtype=float) + 0.0 * x, domain, max_deg=2048)


def harmonic_from_cauchy(f, g, halfwidth: float, domain: tuple[float, float] = (0.0, 1.0)) -> HolomorphicHarmonic:
    """Harmonic ``w`` with ``w(xi, 0) = f(xi)`` and ``d_eta w(xi, 0) = g(xi)``.

    With ``G' = g`` the holomorphic function ``W = f - i G`` satisfies
    ``Re W = f`` and ``d_eta Re W = Im W' = g`` on the real axis, so
    ``w = Re W(xi + i eta)``.  Both data are Chebyshev series, so ``W``
    continues into the Bernstein ellipse of the coarser one.
    """
    fc = as_chebyshev(f, domain)
    gc = as_chebyshev(g, domain)
    radius = min(ellipse_halfwidth(fc), ellipse_halfwidth(gc))
    if halfwidth >= radius:
        worst = fc if ellipse_halfwidth(fc) <= ellipse_halfwidth(gc) else gc
        tail = np.array2string(np.abs(worst.coef[-6:]), precision=3)
        raise KernelError(
            f"continuation radius {radius:.4g} does not cover the strip halfwidth {halfwidth:.4g}; "
            f"coefficient tail {tail}"
        )
    G = gc.integ()
    G = G - G(0.0) if domain[0] <= 0.0 <= domain[1] else G
    W = Chebyshev(np.zeros(1), domain=list(fc.domain)) + fc - 1j * G
    ders = [W, W.deriv(1), W.deriv(2), W.deriv(3)]

    def jet(z, k):
        return tuple(np.asarray(d(z), dtype=complex) for d in ders[: k + 1])

    h = HolomorphicHarmonic(jet, "cauchy_continuation", radius)
    h.series = W
    return h


# ---------------------------------------------------------------------------
# Transport along characteristics
# ---------------------------------------------------------------------------

Drift = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
Source = Callable[[np.ndarray, np.ndarray], np.ndarray]


class TransportSolution:
    """Solution of ``drift . grad(beta) = source`` with data on ``eta = 0``.

    The bundle consists of characteristics started from Chebyshev-Lobatto
    footpoints.  At a fixed ``eta`` the positions ``X(xi0)`` and values
    ``B(xi0)`` are interpolated spectrally in the footpoint ``xi0``; a query
    point is mapped back to its footpoint by monotone bisection.
    """

    def __init__(self, nodes, up, down, drift: Drift, source: Source | None, ncomp: int,
                 eta_range: tuple[float, float], init_values: np.ndarray):
        self.nodes = nodes
        self._up = up
        self._down = down
        self.drift = drift
        self.source = source
        self.ncomp = ncomp
        self.eta_range = eta_range
        self._init = init_values
        self.domain = (float(nodes[0]), float(nodes[-1]))

    # -- raw bundle ---------------------------------------------------------
    def states(self, eta_values: np.ndarray) -> np.ndarray:
        """Bundle state at each ``eta``: shape ``(len(eta), 1 + ncomp, K)``."""
        eta_values = np.asarray(eta_values, dtype=float)
        lo, hi = self.eta_range
        if np.any(eta_values > hi * (1 + 1e-12)) or np.any(eta_values < lo * (1 + 1e-12)):
            raise DomainShrink(f"eta outside the integrated range [{lo:.4g}, {hi:.4g}]")
        K = self.nodes.size
        out = np.empty((eta_values.size, 1 + self.ncomp, K))
        pos = eta_values > 0
        neg = eta_values < 0
        zero = ~(pos | neg)
        if np.any(pos):
            out[pos] = self._up.sol(eta_values[pos]).T.reshape(-1, 1 + self.ncomp, K)
        if np.any(neg):
            out[neg] = self._down.sol(eta_values[neg]).T.reshape(-1, 1 + self.ncomp, K)
        if np.any(zero):
            out[zero] = self._init
        return out

    def _slices(self, eta: np.ndarray):
        uniq, inv = np.unique(eta, return_inverse=True)
        st = self.states(uniq)
        coefs = lobatto_coefficients(np.moveaxis(st, 2, 0))  # (K, n_eta, 1+m)
        return uniq, inv, st, coefs

    def _cheb_eval(self, c, x):
        a, b = self.domain
        t = (2.0 * x - (a + b)) / (b - a)
        return npcheb.chebval(t, c)

    def _cheb_deriv_eval(self, c, x):
        a, b = self.domain
        t = (2.0 * x - (a + b)) / (b - a)
        return npcheb.chebval(t, npcheb.chebder(c)) * 2.0 / (b - a)

    def footpoint(self, xi, eta) -> np.ndarray:
        """Footpoint ``xi0`` of the characteristic through ``(xi, eta)``."""
        return self._locate(xi, eta)[0]

    def _locate(self, xi, eta):
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        shape = xi.shape
        xi = xi.ravel()
        eta = eta.ravel()
        uniq, inv, st, coefs = self._slices(eta)
        xi0 = np.empty_like(xi)
        for j in range(uniq.size):
            sel = inv == j
            X = st[j, 0]
            if np.any(np.diff(X) <= 0):
                raise KernelError(f"characteristics cross at eta={uniq[j]:.4g}: footpoint map not monotone")
            target = xi[sel]
            if np.any(target < X[0]) or np.any(target > X[-1]):
                raise DomainShrink(
                    f"point outside the characteristic bundle at eta={uniq[j]:.4g} "
                    f"(covered [{X[0]:.6g}, {X[-1]:.6g}])"
                )
            c = coefs[:, j, 0]
            k = np.clip(np.searchsorted(X, target), 1, X.size - 1)
            lo = self.nodes[k - 1].copy()
            hi = self.nodes[k].copy()
            # Newton from the linear interpolant, kept inside the bracket
            w = (target - X[k - 1]) / (X[k] - X[k - 1])
            x0 = lo + w * (hi - lo)
            dc = npcheb.chebder(c)
            scale = 1e-15 * max(1.0, abs(self.domain[0]), abs(self.domain[1]))
            done = np.zeros(x0.shape, dtype=bool)
            for _ in range(12):
                a, b = self.domain
                t = (2.0 * x0 - (a + b)) / (b - a)
                step = (npcheb.chebval(t, c) - target) / (npcheb.chebval(t, dc) * 2.0 / (b - a))
                x0 = np.clip(x0 - step, lo, hi)
                done = np.abs(step) <= scale
                if np.all(done):
                    break
            if not np.all(done):
                # bisection fallback for the stragglers
                bad = ~done
                blo, bhi = lo[bad], hi[bad]
                tb = target[bad]
                for _ in range(64):
                    mid = 0.5 * (blo + bhi)
                    right = self._cheb_eval(c, mid) > tb
                    bhi = np.where(right, mid, bhi)
                    blo = np.where(right, blo, mid)
                    if np.max(bhi - blo) < scale:
                        break
                x0[bad] = 0.5 * (blo + bhi)
            xi0[sel] = x0
        return xi0.reshape(shape), inv, coefs, xi.reshape(shape), eta.reshape(shape)

    def __call__(self, xi, eta) -> np.ndarray:
        """Transported values; shape ``(ncomp, *shape)`` (or ``shape`` if ``ncomp == 1``)."""
        xi0, inv, coefs, xi_, eta_ = self._locate(xi, eta)
        flat0 = xi0.ravel()
        out = np.empty((self.ncomp, flat0.size))
        for j in range(coefs.shape[1]):
            sel = inv == j
            for m in range(self.ncomp):
                out[m, sel] = self._cheb_eval(coefs[:, j, 1 + m], flat0[sel])
        out = out.reshape((self.ncomp,) + xi0.shape)
        return out[0] if self.ncomp == 1 else out

    def gradient(self, xi, eta) -> tuple[np.ndarray, np.ndarray]:
        """``(d_xi beta, d_eta beta)`` from the interpolant and the characteristic ODE."""
        xi0, inv, coefs, xi_, eta_ = self._locate(xi, eta)
        flat0 = xi0.ravel()
        dX = np.empty(flat0.size)
        dB = np.empty((self.ncomp, flat0.size))
        for j in range(coefs.shape[1]):
            sel = inv == j
            dX[sel] = self._cheb_deriv_eval(coefs[:, j, 0], flat0[sel])
            for m in range(self.ncomp):
                dB[m, sel] = self._cheb_deriv_eval(coefs[:, j, 1 + m], flat0[sel])
        dxi_, deta_ = self.drift(xi_.ravel(), eta_.ravel())
        rate = self._rates(xi_.ravel(), eta_.ravel(), deta_)
        d0_dxi = 1.0 / dX
        d0_deta = -(dxi_ / deta_) / dX
        gx = dB * d0_dxi
        gy = dB * d0_deta + rate
        shape = (self.ncomp,) + xi0.shape
        gx, gy = gx.reshape(shape), gy.reshape(shape)
        return (gx[0], gy[0]) if self.ncomp == 1 else (gx, gy)

    def _rates(self, x, eta, deta):
        if self.source is None:
            return np.zeros((self.ncomp, x.size))
        s = np.asarray(self.source(x, eta), dtype=float).reshape(self.ncomp, -1)
        return s / deta

    def residual(self, xi, eta) -> np.ndarray:
        """``drift . grad(beta) - source`` at the query points."""
        gx, gy = self.gradient(xi, eta)
        xi_, eta_ = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        dx, dy = self.drift(xi_.ravel(), eta_.ravel())
        src = np.zeros((self.ncomp, xi_.size)) if self.source is None else \
            np.asarray(self.source(xi_.ravel(), eta_.ravel()), float).reshape(self.ncomp, -1)
        gx = np.asarray(gx).reshape(self.ncomp, -1)
        gy = np.asarray(gy).reshape(self.ncomp, -1)
        res = (dx * gx + dy * gy - src).reshape((self.ncomp,) + xi_.shape)
        return res[0] if self.ncomp == 1 else res

    def characteristic(self, k: int, eta_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Position and values of the ``k``-th stored characteristic."""
        st = self.states(np.asarray(eta_values, float))
        return st[:, 0, k], st[:, 1:, k]

    def reintegrate(self, k: int, eta_end: float, rtol: float = 1e-12, atol: float = 1e-14) -> float:
        """Integrate characteristic ``k`` on its own and return the endpoint discrepancy."""
        y0 = self._init[:, k]

        def rhs(eta, y):
            dx, dy = self.drift(np.array([y[0]]), np.array([eta]))
            out = [dx[0] / dy[0]]
            out.extend(self._rates(np.array([y[0]]), np.array([eta]), dy)[:, 0])
            return out

        sol = solve_ivp(rhs, (0.0, eta_end), y0, method="DOP853", rtol=rtol, atol=atol)
        stored = self.states(np.array([eta_end]))[0, :, k]
        return float(np.max(np.abs(sol.y[:, -1] - stored)))

    def to_csv(self, path, eta_values: Sequence[float]) -> None:
        """Dump the bundle ``(k, xi0, eta, X, B...)`` for debugging."""
        eta_values = np.asarray(eta_values, float)
        st = self.states(eta_values)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "xi0", "eta", "xi"] + [f"value{m}" for m in range(self.ncomp)])
            for k, x0 in enumerate(self.nodes):
                for j, e in enumerate(eta_values):
                    wr.writerow([k, repr(float(x0)), repr(float(e)), repr(float(st[j, 0, k]))]
                                + [repr(float(v)) for v in st[j, 1:, k]])


def solve_transport(
    drift: Drift,
    source: Source | None,
    init: Callable[[np.ndarray], np.ndarray],
    *,
    footpoints: tuple[float, float],
    eta_max: float,
    eta_min: float | None = None,
    n_nodes: int = 128,
    ncomp: int = 1,
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> TransportSolution:
    """Solve ``drift . grad(beta) = source`` with ``beta(xi, 0) = init(xi)``.

    Characteristics ``d xi/d eta = D_xi/D_eta`` start from ``n_nodes + 1``
    Chebyshev-Lobatto footpoints on ``footpoints`` and are integrated with
    DOP853 up to ``eta_max`` and down to ``eta_min`` (default ``-eta_max``).
    ``source`` and ``init`` may return ``ncomp`` stacked components.
    """
    eta_min = -eta_max if eta_min is None else eta_min
    nodes = lobatto_nodes(n_nodes, footpoints)
    K = nodes.size
    d0x, d0y = drift(nodes, np.zeros(K))
    d0y = np.asarray(d0y, float)
    if np.any(np.abs(d0y) <= 1e-12 * max(1.0, np.max(np.abs(d0y)))) or np.any(np.sign(d0y) != np.sign(d0y[0])):
        raise KernelError("eta = 0 is characteristic: the eta-component of the drift vanishes or changes sign")
    b0 = np.asarray(init(nodes), float).reshape(ncomp, K)
    y0 = np.concatenate([nodes[None, :], b0], axis=0)

    def rhs(eta, y):
        st = y.reshape(1 + ncomp, K)
        x = st[0]
        e = np.full(K, eta)
        dx, dy = drift(x, e)
        out = np.empty_like(st)
        out[0] = dx / dy
        if source is None:
            out[1:] = 0.0
        else:
            out[1:] = np.asarray(source(x, e), float).reshape(ncomp, K) / dy
        return out.ravel()

    def run(end):
        if end == 0.0:
            return None
        sol = solve_ivp(rhs, (0.0, end), y0.ravel(), method="DOP853", rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise DomainShrink(f"characteristic integration failed towards eta={end:.4g}: {sol.message}")
        X = sol.y[:K]
        if not np.all(np.isfinite(sol.y)):
            raise DomainShrink("characteristics blew up inside the strip")
        if np.any(np.diff(X, axis=0) <= 0):
            raise KernelError(f"characteristics cross before eta={end:.4g}: strip too wide")
        return sol

    up = run(eta_max)
    down = run(eta_min)
    return TransportSolution(nodes, up, down, drift, source, ncomp, (eta_min, eta_max), y0)


class FlowMap:
    """``p`` (forward flow) or ``q`` (its inverse in ``xi``) of the gradient lines of ``w``."""

    def __init__(self, bundle: TransportSolution, kind: str):
        self.bundle = bundle
        self.kind = kind

    def __call__(self, xi, eta) -> np.ndarray:
        if self.kind == "q":
            return self.bundle.footpoint(xi, eta)
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        uniq, inv = np.unique(eta.ravel(), return_inverse=True)
        st = self.bundle.states(uniq)
        coefs = lobatto_coefficients(st[:, 0, :].T)
        out = np.empty(xi.size)
        flat = xi.ravel()
        for j in range(uniq.size):
            sel = inv == j
            out[sel] = self.bundle._cheb_eval(coefs[:, j], flat[sel])
        return out.reshape(xi.shape)


def flow_pq(w: HarmonicFunction, *, footpoints: tuple[float, float], eta_max: float,
            n_nodes: int = 128) -> tuple[FlowMap, FlowMap]:
    """Flow maps of the gradient lines of ``w`` leaving ``eta = 0``.

    ``p(xi, eta)`` is the position at height ``eta`` of the line started at
    ``xi``; ``q`` inverts it in ``xi``, so ``p(q(xi, eta), eta) = xi``.
    """

    def drift(x, e):
        return w.grad(x, e)

    bundle = solve_transport(drift, None, lambda x: np.zeros_like(x), footpoints=footpoints,
                             eta_max=eta_max, n_nodes=n_nodes, ncomp=1)
    return FlowMap(bundle, "p"), FlowMap(bundle, "q")


# ---------------------------------------------------------------------------
# Exact vertical quadrature of piecewise affine columns
# ---------------------------------------------------------------------------


@dataclass
class PiecewiseAffineColumn:
    """Horizontal field part along vertical lines: ``p_j + q_j (z - c_j)`` on ``[b_j, b_{j+1}]``.

    ``bounds`` has shape ``(P, m + 1)`` for ``P`` base points and ``m``
    regions; ``p`` and ``q`` have shape ``(P, m, 2)`` and the optional
    centres ``center`` shape ``(P, m)``.  Centring each affine piece at a
    point inside its region avoids cancellation.  Below ``b_0`` and above
    ``b_m`` the horizontal part is the constant ``below``/``above``; ``None``
    means the field is not defined there and contributes nothing.
    """

    bounds: np.ndarray
    p: np.ndarray
    q: np.ndarray
    below: np.ndarray | None = None
    above: np.ndarray | None = None
    center: np.ndarray | None = None

    def antiderivative(self, z: np.ndarray) -> np.ndarray:
        """``F(z) = int_{b_0}^{z} phi^{xi eta} dz'``; ``z`` has shape ``(P, n)``, result ``(P, n, 2)``."""
        z = np.asarray(z, float)
        b = self.bounds
        P, m1 = b.shape
        out = np.zeros(z.shape + (2,))
        for j in range(m1 - 1):
            lo = b[:, j][:, None]
            hi = b[:, j + 1][:, None]
            zc = np.clip(z, lo, hi)
            width = (zc - lo)[..., None]
            mid = 0.5 * (zc + lo)
            if self.center is not None:
                mid = mid - self.center[:, j][:, None]
            out += width * (self.p[:, j][:, None, :] + self.q[:, j][:, None, :] * mid[..., None])
        if self.below is not None:
            out += np.minimum(z - b[:, :1], 0.0)[..., None] * self.below[:, None, :]
        if self.above is not None:
            out += np.maximum(z - b[:, -1:], 0.0)[..., None] * self.above[:, None, :]
        return out

    def integral(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """``I(s, t) = int_s^t phi^{xi eta} dz`` (sign-reversing when ``s > t``)."""
        return self.antiderivative(t) - self.antiderivative(s)


def vertical_quadrature(field, xi, eta, s, t) -> np.ndarray:
    """``I(xi, eta, s, t)``: exact z-integral of the horizontal field components.

    ``field`` must provide ``column(xi, eta) -> PiecewiseAffineColumn``.  The
    arrays ``xi`` and ``eta`` are flat base points; ``s`` and ``t`` have
    shape ``(P,)`` or ``(P, n)``.
    """
    xi = np.atleast_1d(np.asarray(xi, float))
    eta = np.atleast_1d(np.asarray(eta, float))
    col = field.column(xi, eta)
    P = xi.size

    def as2d(a):
        a = np.asarray(a, float)
        if a.ndim == 0:
            return np.full((P, 1), float(a))
        if a.ndim == 1:
            return a.reshape(P, 1)
        return a

    s = np.asarray(s)
    t = np.asarray(t)
    flat = s.ndim <= 1 and t.ndim <= 1
    s2, t2 = np.broadcast_arrays(as2d(s), as2d(t))
    res = col.integral(s2, t2)
    return res[:, 0, :] if flat else res
