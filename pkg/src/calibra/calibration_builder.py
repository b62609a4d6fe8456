"""Parameter selection and assembly of the piecewise calibration fields.

Two variants are supported.  ``"dirichlet"`` is the seven-region field whose
transition layers around the traces have thickness ``2 eps``; ``"graph"``
replaces those layers by the two-level families built on ``v_i = 1 +- M eta``
and ``v~_i = 2 eps +- M' eta`` so that the field can be continued along the
graph of ``u`` away from the curve (see :func:`build_extension_field`).

The horizontal field is always affine in ``z`` inside a region, which is what
makes the vertical quadrature in :mod:`calibra.analytic_kernel` exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.polynomial import Chebyshev
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import spsolve

from ._cheb import adaptive_interpolate, chop, lobatto_coefficients, lobatto_nodes
from .analytic_kernel import (
    DomainShrink,
    HolomorphicHarmonic,
    KernelError,
    PiecewiseAffineColumn,
    TransportSolution,
    harmonic_from_cauchy,
    solve_transport,
)
from .curve_geometry import to_cartesian
from .euler_check import Candidate

__all__ = [
    "BuildError",
    "RiccatiBlowup",
    "GraphWindowError",
    "ExtensionError",
    "Constants",
    "CalibrationParams",
    "RiccatiSolution",
    "WSigma",
    "BetaPair",
    "CalibrationField",
    "ExtensionBlock",
    "compute_constants",
    "graph_window",
    "select_parameters",
    "solve_riccati_n",
    "exact_closure",
    "build_w_sigma",
    "build_beta",
    "assemble_field",
    "build_extension_field",
    "calibrate",
]

log = logging.getLogger(__name__)

C_TILDE = 78.0


class BuildError(RuntimeError):
    """The construction could not produce a field passing verification."""

    def __init__(self, message: str, worst: str | None = None, history: list | None = None):
        super().__init__(message)
        self.worst = worst
        self.history = history or []


class RiccatiBlowup(ValueError):
    """The Riccati solution left ``[-N, N]``: ``eps`` is too large."""


class GraphWindowError(ValueError):
    """Empty admissible window for ``M``: domain too large for graph calibration."""


class ExtensionError(ValueError):
    """The Robin extension problem is not coercive at this ``M`` and ``k``."""


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    N: float
    d: float
    h: float
    c_tilde: float
    c: float

    def as_dict(self) -> dict:
        return {"N": self.N, "d": self.d, "h": self.h, "c_tilde": self.c_tilde, "c": self.c}


def compute_constants(l: float, k: float, candidate: Candidate | None = None,
                      variant: str = "dirichlet") -> Constants:
    """``N``, ``d``, ``h``, ``c~`` and ``c`` for a curve of length ``l`` and sup-curvature ``k``.

    ``h`` needs the candidate (second normal derivatives for the Dirichlet
    variant, ``C^1`` norms of the tangential derivatives for the graph
    variant); without one the pure-jump value is returned.
    """
    if l <= 0 or k < 0:
        raise ValueError("need l > 0 and k >= 0")
    N = 1.0 + max(math.pi / (4.0 * l), k)
    d = 1.0 / (1.0 + 16.0 * l * l * N * N / math.pi**2)
    if variant == "dirichlet":
        s = 0.0
        if candidate is not None:
            t = candidate.traces(candidate.sample_xi(4097))
            s = float(np.max(np.abs(t["detaeta1"])) ** 2 + np.max(np.abs(t["detaeta2"])) ** 2)
        h = max(1.0, 1.1 * (32.0 / math.pi**2) * (2.0 - d) * l * l * s)
    elif variant == "graph":
        s = 0.0 if candidate is None else float(sum(v**2 for v in candidate.c1_norms()))
        h = (64.0 / math.pi**2) * l * l * s
    else:
        raise ValueError(f"unknown variant {variant!r}")
    c = max(C_TILDE, 64.0 / math.pi**2)
    return Constants(N, d, h, C_TILDE, c)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationParams:
    """All scalars of one construction; ``n``/``tau`` are filled in by :func:`assemble_field`."""

    variant: str
    eps: float
    lam: float
    M: float
    mu: float
    M_prime: float | None
    delta: float | None
    halfwidth: float
    gap: float
    constants: Constants
    window: tuple[float, float] | None = None
    n: Chebyshev | None = field(default=None, repr=False, compare=False)
    tau: Chebyshev | None = field(default=None, repr=False, compare=False)

    @property
    def A(self) -> float:
        """Prefactor of ``sigma``: ``1 - 2 eps M`` or ``1 - eps M' - 6 eps^2 M``."""
        if self.variant == "dirichlet":
            return 1.0 - 2.0 * self.eps * self.M
        return 1.0 - self.eps * self.M_prime - 6.0 * self.eps**2 * self.M

    @property
    def e(self) -> float:
        """Weight of ``d_xi u_1 + d_xi u_2`` in ``I^xi`` away from the gradient block."""
        return (2.0 if self.variant == "dirichlet" else 4.0) * self.eps

    @property
    def c_w(self) -> float:
        """Coefficient of the ``w`` trace: ``e / A``."""
        return self.e / self.A

    def as_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "eps": self.eps,
            "lambda": self.lam,
            "M": self.M,
            "mu": self.mu,
            "M_prime": self.M_prime,
            "delta": self.delta,
            "halfwidth": self.halfwidth,
            "min_gap": self.gap,
            "A": self.A,
            "constants": self.constants.as_dict(),
            "window": None if self.window is None else list(self.window),
        }
        if self.n is not None:
            out["n_degree"] = int(self.n.degree())
            out["n_coefficients"] = [float(c) for c in self.n.coef]
        return out


def graph_window(candidate: Candidate, capacity: float) -> tuple[float, float]:
    """Open window ``(lower, upper)`` for ``M`` in the graph variant.

    ``lower = c (1 + l^2 + l^2 k^2) sum ||d_tau u_i||^2_{C^1}`` and
    ``upper = min_j K`` (passed in as ``capacity``).
    """
    chart = candidate.chart
    l, k = chart.length, chart.curvature.k
    consts = compute_constants(l, k, candidate, "graph")
    s = float(sum(v**2 for v in candidate.c1_norms()))
    return consts.c * (1.0 + l * l + l * l * k * k) * s, float(capacity)


def _sup_dxi(candidate: Candidate) -> tuple[float, np.ndarray, dict]:
    xi = candidate.sample_xi(4097)
    t = candidate.traces(xi)
    return float(max(np.max(np.abs(t["dxi1"])), np.max(np.abs(t["dxi2"])))), xi, t


def select_parameters(
    candidate: Candidate,
    variant: str = "dirichlet",
    *,
    eps: float | None = None,
    M: float | None = None,
    lam: float | None = None,
    capacity: float | None = None,
    halfwidth_factor: float = 0.05,
    min_A: float = 0.5,
) -> CalibrationParams:
    """Choose ``M``, ``lambda``, ``mu``, ``eps`` (and ``M'`` for the graph variant).

    Policies: ``M = 1.1 sup|d_xi u_i|`` with floor 1 (Dirichlet);
    ``lambda = max(10, 4 / gap)``; ``mu`` exceeds its lower bound by 10%;
    ``eps`` starts at ``0.1 gap`` and is halved while the prefactor ``A``
    is below ``min_A``.  The graph variant needs the capacity
    ``min_j K(Gamma, Omega'_j)`` to bound ``M`` from above.
    """
    if variant not in ("dirichlet", "graph"):
        raise ValueError(f"unknown variant {variant!r}")
    chart = candidate.chart
    l, k = chart.length, chart.curvature.k
    sup_a, xi, t = _sup_dxi(candidate)
    gap = float(np.min(t["u2"] - t["u1"]))
    if not gap > 0:
        raise ValueError("traces must be distinct: u1 < u2 on the curve")
    consts = compute_constants(l, k, candidate, variant)
    lam = max(10.0, 4.0 / gap) if lam is None else float(lam)
    S = t["dxi1"] + t["dxi2"]
    window = None
    M_prime = None
    if variant == "dirichlet":
        M = max(1.0, 1.1 * sup_a) if M is None else float(M)
        if not M > sup_a:
            raise ValueError(f"M={M} must exceed sup|d_xi u_i| = {sup_a}")
    else:
        if capacity is None:
            raise ValueError("graph variant needs the capacity min_j K(Gamma, Omega'_j)")
        lower, upper = graph_window(candidate, capacity)
        window = (lower, upper)
        if not lower < upper:
            raise GraphWindowError(
                f"domain too large for graph calibration: window ({lower:.6g}, {upper:.6g}) is empty")
        if M is None:
            M = math.sqrt(lower * upper) if lower > 0 else 0.5 * upper
        M = float(M)
        if not lower < M < upper:
            raise GraphWindowError(
                f"domain too large for graph calibration: M={M:.6g} outside the window ({lower:.6g}, {upper:.6g})")
        M_prime = max(2.2 * sup_a, 0.2)
    eps = 0.1 * gap if eps is None else float(eps)
    probe = CalibrationParams(variant, eps, lam, M, 0.0, M_prime, None, 0.0, gap, consts, window)
    while probe.A < min_A:
        eps *= 0.5
        probe = replace(probe, eps=eps)
    e = probe.e
    mu = 1.1 * float(np.max(0.25 * lam**2 * (probe.A**2 + e**2 * S**2)))
    if variant == "dirichlet":
        H = halfwidth_factor * eps / M
    else:
        H = halfwidth_factor * min(1.0 / M, 2.0 * eps / M_prime, eps / max(M, 1.0))
    H = min(H, chart.halfwidth)
    return replace(probe, mu=mu, halfwidth=H)


# ---------------------------------------------------------------------------
# Riccati problem for n
# ---------------------------------------------------------------------------

Closure = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class RiccatiSolution:
    tau: Chebyshev
    n: Chebyshev
    sup_tau: float
    comparison_bound: float
    N: float
    closure: str

    def as_dict(self) -> dict:
        return {"sup_tau": self.sup_tau, "comparison_bound": self.comparison_bound, "N": self.N,
                "closure": self.closure, "degree_tau": int(self.tau.degree()), "degree_n": int(self.n.degree())}


def _comparison_bound(l: float, k: float) -> float:
    """``max(||tau_1||, ||tau_2||)`` on ``[0, l]`` for the two constant-coefficient problems."""
    a = math.pi / (4.0 * l)
    t1 = a * math.tan(a * l)
    b2 = a * a - k * k
    if b2 > 0:
        b = math.sqrt(b2)
        t2 = b * math.tan(b * l)
    elif b2 < 0:
        b = math.sqrt(-b2)
        t2 = b * math.tanh(b * l)
    else:
        t2 = 0.0
    return max(t1, t2)


def _ode_to_chebyshev(rhs, domain, limit: float, rtol=1e-13, atol=1e-15) -> Chebyshev:
    """Chebyshev series of the solution of ``y' = rhs(x, y)``, ``y(0) = 0`` on ``domain``.

    The solution is sampled at Lobatto points by DOP853 (both directions
    from 0) and transformed with a DCT; the degree doubles until the tail
    reaches the integration floor.
    """
    a, b = domain

    def blow(x, y):
        return limit - abs(y[0])

    blow.terminal = True

    def run(end, pts):
        if pts.size == 0:
            return np.empty(0)
        sol = solve_ivp(lambda x, y: [rhs(x, y[0])], (0.0, end), [0.0], method="DOP853", t_eval=pts,
                        rtol=rtol, atol=atol, events=blow)
        if sol.status == 1 or sol.y.shape[1] < pts.size or not np.all(np.isfinite(sol.y)):
            where = sol.t_events[0][0] if sol.t_events and len(sol.t_events[0]) else sol.t[-1]
            raise RiccatiBlowup(f"Riccati solution reached |tau| = {limit:.4g} at xi = {where:.6g}: eps too large")
        return sol.y[0]

    coef = None
    for deg in (32, 64, 128, 256, 512):
        x = np.clip(lobatto_nodes(deg, domain), a, b)
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = run(b, x[pos])
        neg = ~pos
        if np.any(neg):
            y[neg] = run(a, x[neg][::-1])[::-1]
        coef = lobatto_coefficients(y)
        scale = max(np.max(np.abs(coef)), 1e-300)
        if np.max(np.abs(coef[-4:])) <= 1e-12 * scale:
            break
    return Chebyshev(chop(coef, floor=2e-14), domain=list(domain))


def solve_riccati_n(
    curvature,
    l: float,
    eps: float = 0.0,
    *,
    closure: Closure | None = None,
    domain: tuple[float, float] | None = None,
    N: float | None = None,
) -> RiccatiSolution:
    """Solve ``-a tau' + h(xi, tau) - tau^2 - curv^2 = -pi^2 / (16 l^2)``, ``tau(0) = 0``.

    Without a ``closure`` the limit coefficients ``a = 1``, ``h = 2 tau^2``
    are used, i.e. ``tau' = tau^2 - curv^2 + pi^2/(16 l^2)``.  ``closure``
    maps ``(xi, tau)`` to ``(a, h)``.  Returns ``tau`` and ``n = exp(int tau)``
    as Chebyshev series on ``domain`` (default ``[0, l]``).

    Raises
    ------
    RiccatiBlowup
        If ``sup |tau|`` on ``[0, l]`` exceeds ``N``.
    """
    domain = (0.0, float(l)) if domain is None else (float(domain[0]), float(domain[1]))
    curv = (lambda x: np.full_like(np.asarray(x, float), float(curvature))) if np.isscalar(curvature) else curvature
    xs = np.linspace(0.0, l, 2049)
    k = float(np.max(np.abs(curv(xs))))
    N = 1.0 + max(math.pi / (4.0 * l), k) if N is None else float(N)
    shift = math.pi**2 / (16.0 * l * l)

    if closure is None:
        def rhs(x, tau):
            return tau * tau - float(curv(np.array([x]))[0]) ** 2 + shift
        name = "limit"
    else:
        def rhs(x, tau):
            a, h = closure(np.array([x]), np.array([tau]))
            return float((h[0] - a[0] * tau * tau - float(curv(np.array([x]))[0]) ** 2 + shift) / a[0])
        name = "exact"

    tau = _ode_to_chebyshev(rhs, domain, limit=50.0 * N)
    sup_tau = float(np.max(np.abs(tau(xs))))
    if sup_tau > N:
        raise RiccatiBlowup(f"sup|tau| = {sup_tau:.6g} exceeds N = {N:.6g}: eps too large")
    T = tau.integ(lbnd=0.0)
    n = adaptive_interpolate(lambda x: np.exp(T(x)), domain, rel=1e-15)
    if domain[0] <= 0.0 <= domain[1]:
        n = n / float(n(0.0))  # n(0) = 1 up to rounding, not interpolation error
    return RiccatiSolution(tau, n, sup_tau, _comparison_bound(l, k), N, name)


def _trace_profiles(candidate: Candidate):
    """Callables ``S``, ``S'`` (sums of tangential derivatives on the curve)."""

    def S(x):
        x = np.asarray(x, float)
        z = np.zeros_like(x)
        return candidate.u1.grad(x, z)[0] + candidate.u2.grad(x, z)[0]

    def dS(x):
        x = np.asarray(x, float)
        z = np.zeros_like(x)
        return candidate.u1.hessian(x, z)[0] + candidate.u2.hessian(x, z)[0]

    return S, dS


def exact_closure(candidate: Candidate, params: CalibrationParams) -> Closure:
    """Coefficients ``(a_eps, h_eps)`` of the second-derivative identity at finite ``eps``.

    With ``S = d_xi u_1 + d_xi u_2`` on the curve, ``c = e/A`` and
    ``B = 1 + c^2 S^2``::

        a = A B
        h = (A B tau - c curv S)^2 + c (S curv)' - 2 A c^2 S S' tau + A B tau^2

    Both tend to the limit closure ``(1, 2 tau^2)`` as ``eps -> 0``.
    """
    A, c = params.A, params.c_w
    S, dS = _trace_profiles(candidate)
    curv = candidate.chart.curvature

    def closure(x, tau):
        s, ds = S(x), dS(x)
        kap, dkap = curv(x), curv.derivative(x)
        B = 1.0 + c * c * s * s
        a = A * B
        h = (a * tau - c * kap * s) ** 2 + c * (ds * kap + s * dkap) - 2.0 * A * c * c * s * ds * tau + a * tau * tau
        return a, h

    return closure


# ---------------------------------------------------------------------------
# w, sigma and beta
# ---------------------------------------------------------------------------


class WSigma:
    """Harmonic ``w`` with its weight ``sigma = A / n(q)``; ``q`` from the conjugate of ``w``.

    ``q(xi, eta)`` is the foot on ``eta = 0`` of the gradient line of ``w``
    through ``(xi, eta)``.  Gradient lines of ``w`` are level lines of its
    harmonic conjugate, whose trace ``-int_0^xi n`` is strictly decreasing,
    so the foot is found by a scalar Newton iteration.
    """

    def __init__(self, w: HolomorphicHarmonic, n: Chebyshev, A: float, domain: tuple[float, float]):
        self.w = w
        self.n = n
        self.A = A
        self.domain = domain

    def q(self, xi, eta, *, tol: float = 1e-15, maxiter: int = 40) -> np.ndarray:
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        target = self.w.conjugate(xi, eta)
        q = xi.astype(float).copy()
        for _ in range(maxiter):
            step = (self.w.conjugate(q, np.zeros_like(q)) - target) / self.n(q)
            q = q + step
            if np.max(np.abs(step), initial=0.0) <= tol * max(1.0, abs(self.domain[1])):
                break
        return q

    def sigma(self, xi, eta) -> np.ndarray:
        return self.A / self.n(self.q(xi, eta))

    def flux(self, xi, eta) -> tuple[np.ndarray, np.ndarray]:
        """``(sigma d_xi w, sigma d_eta w)``; divergence free by construction."""
        s = self.sigma(xi, eta)
        gx, gy = self.w.grad(xi, eta)
        return s * gx, s * gy


def build_w_sigma(candidate: Candidate, n: Chebyshev, params: CalibrationParams, *,
                  halfwidth: float | None = None) -> WSigma:
    """``w`` with ``w(xi,0) = -c_w int_0^xi n S`` and ``d_eta w(xi,0) = n``, plus ``sigma``."""
    domain = tuple(float(v) for v in n.domain)
    S, _ = _trace_profiles(candidate)
    integrand = adaptive_interpolate(lambda x: n(x) * S(x), domain, rel=1e-15)
    f = -params.c_w * integrand.integ(lbnd=0.0)
    H = params.halfwidth if halfwidth is None else halfwidth
    w = harmonic_from_cauchy(f, n, H, domain)
    return WSigma(w, n, params.A, domain)


class BetaPair:
    """``beta_1`` and ``beta_2`` from one transport bundle (components ``beta_1`` and ``beta_2 - beta_1``)."""

    def __init__(self, transport: TransportSolution, lam: float):
        self.transport = transport
        self.lam = lam

    def values(self, xi, eta) -> tuple[np.ndarray, np.ndarray]:
        b1, d = self.transport(xi, eta)
        return b1, b1 + d

    def gradients(self, xi, eta):
        gx, gy = self.transport.gradient(xi, eta)
        return (gx[0], gy[0]), (gx[0] + gx[1], gy[0] + gy[1])

    def residual(self, xi, eta) -> np.ndarray:
        return self.transport.residual(xi, eta)


def _omegas(candidate: Candidate, params: CalibrationParams):
    eps, M, Mp = params.eps, params.M, params.M_prime

    def grad_sq(u, x, e):
        gx, gy = u.grad(x, e)
        return gx * gx + gy * gy

    if params.variant == "dirichlet":
        def om1(x, e):
            return (eps * M) ** 2 / (eps + M * e) ** 2 - grad_sq(candidate.u1, x, e)

        def om2(x, e):
            return (eps * M) ** 2 / (eps - M * e) ** 2 - grad_sq(candidate.u2, x, e)
    else:
        def om1(x, e):
            return eps**2 * (M + Mp * (1.0 - M * e) / (2 * eps + Mp * e)) ** 2 - grad_sq(candidate.u1, x, e)

        def om2(x, e):
            return eps**2 * (M + Mp * (1.0 + M * e) / (2 * eps - Mp * e)) ** 2 - grad_sq(candidate.u2, x, e)
    return om1, om2


def build_beta(params: CalibrationParams, ws: WSigma, omega1, omega2, init, *,
               eta_max: float, n_nodes: int = 128) -> BetaPair:
    """Solve ``lambda sigma grad(w) . grad(beta_i) = mu - omega_i`` with ``beta_i(xi, 0) = init(xi)``."""
    lam, mu = params.lam, params.mu

    def drift(x, e):
        X, Y = ws.flux(x, e)
        return lam * X, lam * Y

    def source(x, e):
        o1 = omega1(x, e)
        return np.stack([mu - o1, o1 - omega2(x, e)])

    def start(x):
        return np.stack([init(x), np.zeros_like(x)])

    tr = solve_transport(drift, source, start, footpoints=ws.domain, eta_max=eta_max, n_nodes=n_nodes, ncomp=2)
    return BetaPair(tr, lam)


# ---------------------------------------------------------------------------
# The field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    name: str
    kind: str  # "vertical" | "family" | "gradient"
    key: str  # omega key for vertical regions, family name otherwise


_DIRICHLET_REGIONS = (
    Region("A1", "vertical", "om1"),
    Region("A2", "family", "u1"),
    Region("A3", "vertical", "om1"),
    Region("A4", "gradient", ""),
    Region("A5", "vertical", "om2"),
    Region("A6", "family", "u2"),
    Region("A7", "vertical", "om2"),
)

_GRAPH_REGIONS = (
    None,
    Region("A1", "family", "u1"),
    Region("A2", "family", "u1t"),
    Region("A3", "vertical", "om1"),
    Region("A4", "gradient", ""),
    Region("A5", "vertical", "om2"),
    Region("A6", "family", "u2t"),
    Region("A7", "family", "u2"),
    None,
)


class CalibrationField:
    """Piecewise calibration field in chart coordinates.

    ``regions`` has one entry per z-interval cut by the boundary surfaces
    (``None`` where the field is undefined).  All evaluators take flat or
    broadcastable arrays of base points.
    """

    def __init__(self, candidate: Candidate, params: CalibrationParams, ws: WSigma, beta: BetaPair,
                 eta_range: float, riccati: RiccatiSolution):
        self.candidate = candidate
        self.chart = candidate.chart
        self.params = params
        self.ws = ws
        self.beta = beta
        self.eta_range = eta_range
        self.riccati = riccati
        self.variant = params.variant
        self.halfwidth = params.halfwidth
        self.regions = _DIRICHLET_REGIONS if self.variant == "dirichlet" else _GRAPH_REGIONS
        self._om1, self._om2 = _omegas(candidate, params)
        self.extension: ExtensionBlock | None = None
        self.mu_override: float | None = None

    # -- base-point data ----------------------------------------------------
    @property
    def mu(self) -> float:
        return self.params.mu if self.mu_override is None else self.mu_override

    def local(self, xi, eta, *, with_beta_gradient: bool = False) -> dict:
        xi = np.asarray(xi, float).ravel()
        eta = np.asarray(eta, float).ravel()
        c = self.candidate
        loc = {"xi": xi, "eta": eta}
        loc["u1"] = c.u1.value(xi, eta)
        loc["u2"] = c.u2.value(xi, eta)
        loc["g1"] = np.stack(c.u1.grad(xi, eta), axis=-1)
        loc["g2"] = np.stack(c.u2.grad(xi, eta), axis=-1)
        loc["b1"], loc["b2"] = self.beta.values(xi, eta)
        X, Y = self.ws.flux(xi, eta)
        loc["flux"] = np.stack([X, Y], axis=-1)
        loc["om1"] = self._om1(xi, eta)
        loc["om2"] = self._om2(xi, eta)
        if with_beta_gradient:
            (b1x, b1y), (b2x, b2y) = self.beta.gradients(xi, eta)
            loc["gb1"] = np.stack([b1x, b1y], axis=-1)
            loc["gb2"] = np.stack([b2x, b2y], axis=-1)
        return loc

    def _family(self, key: str, loc: dict):
        """``(U, grad U, v, grad v)`` of the harmonic family ``U - t v`` named ``key``."""
        p = self.params
        eps, M = p.eps, p.M
        eta = loc["eta"]
        one = np.ones_like(eta)
        zero = np.zeros_like(eta)
        if self.variant == "dirichlet":
            if key == "u1":
                return loc["u1"], loc["g1"], eps + M * eta, np.stack([zero, M * one], -1)
            return loc["u2"], loc["g2"], eps - M * eta, np.stack([zero, -M * one], -1)
        Mp = p.M_prime
        up = np.stack([zero, eps * M * one], -1)
        if key == "u1":
            return loc["u1"], loc["g1"], 1.0 + M * eta, np.stack([zero, M * one], -1)
        if key == "u2":
            return loc["u2"], loc["g2"], 1.0 - M * eta, np.stack([zero, -M * one], -1)
        if key == "u1t":
            return loc["u1"] + eps * (1.0 + M * eta), loc["g1"] + up, 2 * eps + Mp * eta, np.stack([zero, Mp * one], -1)
        return loc["u2"] - eps * (1.0 - M * eta), loc["g2"] + up, 2 * eps - Mp * eta, np.stack([zero, -Mp * one], -1)

    def bounds(self, loc: dict) -> np.ndarray:
        """Boundary heights ``(P, nb)`` in increasing order."""
        p = self.params
        eps, lam, M = p.eps, p.lam, p.M
        u1, u2, b1, b2, eta = loc["u1"], loc["u2"], loc["b1"], loc["b2"], loc["eta"]
        if self.variant == "dirichlet":
            cols = [u1 - eps, u1 + eps, b1, b2 + 1.0 / lam, u2 - eps, u2 + eps]
        else:
            v1, v2 = 1.0 + M * eta, 1.0 - M * eta
            cols = [u1 - eps * v1, u1 + eps * v1, u1 + 2 * eps, b1, b2 + 1.0 / lam, u2 - 2 * eps, u2 - eps * v2,
                    u2 + eps * v2]
        return np.stack(cols, axis=-1)

    def bound_gradients(self, loc: dict) -> np.ndarray:
        """Gradients ``(P, nb, 2)`` of the boundary heights (needs ``with_beta_gradient``)."""
        p = self.params
        g1, g2, gb1, gb2 = loc["g1"], loc["g2"], loc["gb1"], loc["gb2"]
        if self.variant == "dirichlet":
            cols = [g1, g1, gb1, gb2, g2, g2]
        else:
            up = np.zeros_like(g1)
            up[:, 1] = p.eps * p.M
            cols = [g1 - up, g1 + up, g1, gb1, gb2, g2, g2 + up, g2 - up]
        return np.stack(cols, axis=1)

    def formula(self, r: int, loc: dict, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Field of region ``r`` at heights ``z`` (shape ``(P,)`` or ``(P, n)``), ignoring membership."""
        reg = self.regions[r]
        z = np.asarray(z, float)
        shape = z.shape
        P = loc["eta"].size
        z2 = z.reshape(P, -1)

        def b(a):
            return np.broadcast_to(a[:, None], z2.shape)

        if reg is None:
            nan = np.full(z2.shape, np.nan)
            return nan.reshape(shape), nan.reshape(shape), nan.reshape(shape)
        if reg.kind == "vertical":
            zero = np.zeros(z2.shape)
            return zero.reshape(shape), zero.reshape(shape), b(loc[reg.key]).reshape(shape)
        if reg.kind == "gradient":
            lam = self.params.lam
            return (b(lam * loc["flux"][:, 0]).reshape(shape), b(lam * loc["flux"][:, 1]).reshape(shape),
                    np.full(z2.shape, self.mu).reshape(shape))
        U, gU, v, gv = self._family(reg.key, loc)
        t = (U[:, None] - z2) / v[:, None]
        Px = gU[:, 0][:, None] - t * gv[:, 0][:, None]
        Py = gU[:, 1][:, None] - t * gv[:, 1][:, None]
        return (2 * Px).reshape(shape), (2 * Py).reshape(shape), (Px * Px + Py * Py).reshape(shape)

    def region_index(self, loc: dict, z) -> np.ndarray:
        bnd = self.bounds(loc)
        z2 = np.asarray(z, float).reshape(bnd.shape[0], -1)
        idx = np.empty(z2.shape, dtype=int)
        for i in range(bnd.shape[0]):
            idx[i] = np.searchsorted(bnd[i], z2[i], side="right")
        return idx.reshape(np.shape(z))

    def evaluate(self, xi, eta, z) -> np.ndarray:
        """Chart components ``(..., 3)`` at ``(xi, eta, z)``; ``z`` may carry an extra sample axis."""
        loc = self.local(xi, eta)
        return self.evaluate_local(loc, z)

    def evaluate_local(self, loc: dict, z) -> np.ndarray:
        z = np.asarray(z, float)
        idx = self.region_index(loc, z)
        out = np.full(z.shape + (3,), np.nan)
        for r in range(len(self.regions)):
            sel = idx == r
            if not np.any(sel) or self.regions[r] is None:
                continue
            fx, fy, fz = self.formula(r, loc, z)
            out[sel] = np.stack([fx[sel], fy[sel], fz[sel]], axis=-1)
        return out

    def to_cartesian(self, xi, eta, z) -> np.ndarray:
        xi_b, eta_b = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        val = self.evaluate(xi_b, eta_b, z)
        xi_b = xi_b.reshape(val.shape[:1] + (1,) * (val.ndim - 2))
        eta_b = eta_b.reshape(xi_b.shape)
        return to_cartesian(val, self.chart, xi_b, eta_b)

    # -- quadrature support -------------------------------------------------
    def column(self, xi, eta) -> PiecewiseAffineColumn:
        loc = self.local(xi, eta)
        return self.column_local(loc)

    def column_local(self, loc: dict) -> PiecewiseAffineColumn:
        bnd = self.bounds(loc)
        P, nb = bnd.shape
        m = nb - 1
        p = np.zeros((P, m, 2))
        q = np.zeros((P, m, 2))
        center = np.zeros((P, m))
        lam = self.params.lam
        for j in range(m):
            reg = self.regions[j + 1]
            if reg.kind == "gradient":
                p[:, j] = lam * loc["flux"]
            elif reg.kind == "family":
                U, gU, v, gv = self._family(reg.key, loc)
                p[:, j] = 2 * gU
                q[:, j] = 2 * gv / v[:, None]
                center[:, j] = U
        outer = []
        for r in (0, nb):
            reg = self.regions[r]
            if reg is None:
                outer.append(None)
            elif reg.kind == "vertical":
                outer.append(np.zeros((P, 2)))
            else:  # pragma: no cover - no variant has a non-vertical unbounded region
                raise NotImplementedError
        return PiecewiseAffineColumn(bnd, p, q, outer[0], outer[1], center)

    def z_range(self, loc: dict, cap: float) -> tuple[np.ndarray, np.ndarray]:
        """Sampling range for ``s, t``: the defined z-range, padded by ``cap`` when the outer field is vertical."""
        bnd = self.bounds(loc)
        lo, hi = bnd[:, 0].copy(), bnd[:, -1].copy()
        if self.regions[0] is not None:
            lo -= cap
        if self.regions[-1] is not None:
            hi += cap
        return lo, hi

    def manifest(self) -> dict:
        """Reproducibility record: parameters, constants, Riccati data and boundary samples."""
        l0, l1 = self.chart.curve.domain
        xi = np.array([l0, 0.5 * (l0 + l1), l1])
        loc = self.local(xi, np.zeros(3))
        bnd = self.bounds(loc)
        names = [r.name if r is not None else None for r in self.regions]
        return {
            "candidate": self.candidate.label,
            "normalization_shift": self.candidate.shift,
            "params": self.params.as_dict(),
            "riccati": self.riccati.as_dict(),
            "strip_halfwidth": self.halfwidth,
            "transport_eta_range": self.eta_range,
            "regions": names,
            "boundaries_at_eta0": {f"{x:.6g}": [float(b) for b in row] for x, row in zip(xi, bnd)},
            "extension": None if self.extension is None else self.extension.summary(),
        }


def assemble_field(candidate: Candidate, params: CalibrationParams, *, n_nodes: int = 128,
                   exact: bool = True) -> CalibrationField:
    """Build ``n`` (Riccati), ``w``/``sigma``, ``beta_1``/``beta_2`` and the region table for fixed ``params``.

    The transport bundle covers ``|eta| <= eta_T`` with ``eta_T`` somewhat
    larger than the strip, so finite differences at the strip edge and at
    ``eta = 0`` stay inside the integrated range.
    """
    chart = candidate.chart
    l0, l1 = chart.curve.domain
    l = l1 - l0
    H = params.halfwidth
    pad = 0.05 * l + 4.0 * H
    domain = (l0 - pad, l1 + pad)
    closure = exact_closure(candidate, params) if exact else None
    ric = solve_riccati_n(chart.curvature, l, params.eps, closure=closure, domain=domain, N=params.constants.N)
    params = replace(params, n=ric.n, tau=ric.tau)
    h_id = 1e-3 * chart.halfwidth
    eta_T = max(1.25 * H, 2.5 * h_id)
    ws = build_w_sigma(candidate, ric.n, params, halfwidth=eta_T)
    om1, om2 = _omegas(candidate, params)

    def mid(x):
        z = np.zeros_like(x)
        return 0.5 * (candidate.u1.value(x, z) + candidate.u2.value(x, z))

    beta = build_beta(params, ws, om1, om2, mid, eta_max=eta_T, n_nodes=n_nodes)
    return CalibrationField(candidate, params, ws, beta, eta_T, ric)


# ---------------------------------------------------------------------------
# Extension away from the curve (graph variant)
# ---------------------------------------------------------------------------


@dataclass
class ExtensionBlock:
    """Robin-Dirichlet potentials ``v^_i`` on the outer rectangles and the outer field.

    Only straight curves are supported: the chart is then an isometry, the
    outer pieces ``Omega'_i minus U'`` are rectangles ``[0, l] x [k, b]``
    (mirrored for ``i = 1``) and ``|grad eta| = 1``.
    """

    candidate: Candidate
    alpha: float
    k: float
    b: float
    delta: float
    s: np.ndarray  # distance from Gamma_i, in [0, b - k]
    x: np.ndarray
    v: np.ndarray  # (nx, ns), same for both sides by symmetry
    capacity: float
    robin_mismatch: float
    eqnorm_mismatch: float

    def side(self, i: int):
        """Base points ``(xi, eta)`` of side ``i`` on the grid and ``v^``, ``grad v^`` there."""
        X, Sg = np.meshgrid(self.x, self.s, indexing="ij")
        sign = -1.0 if i == 1 else 1.0
        eta = sign * (self.k + Sg)
        hx = self.x[1] - self.x[0]
        hs = self.s[1] - self.s[0]
        gx, gs = np.gradient(self.v, hx, hs, edge_order=2)
        return X, eta, self.v, gx, sign * gs

    def field(self, i: int, z_offsets: np.ndarray):
        """Outer field at ``z = u + z_offsets`` on the grid of side ``i``: shape ``(nx, ns, nz, 3)``."""
        X, eta, v, gx, gy = self.side(i)
        u = self.candidate.u1 if i == 1 else self.candidate.u2
        ux, uy = u.grad(X, eta)
        t = -z_offsets[None, None, :] / v[..., None]  # (u - z) / v
        Px = ux[..., None] - t * gx[..., None]
        Py = uy[..., None] - t * gy[..., None]
        return np.stack([2 * Px, 2 * Py, Px * Px + Py * Py], axis=-1)

    def summary(self) -> dict:
        return {"alpha": self.alpha, "k": self.k, "b": self.b, "delta": self.delta, "capacity": self.capacity,
                "min_v": float(self.v.min()), "robin_mismatch": self.robin_mismatch,
                "eqnorm_mismatch": self.eqnorm_mismatch, "grid": [int(self.x.size), int(self.s.size)]}


def _robin_rectangle(l: float, height: float, alpha: float, nx: int, ns: int):
    """Five-point solve of ``Lap v = 0`` on ``[0,l] x [0,height]``, ``-v_s = alpha v`` at ``s = 0``, ``v = 1`` elsewhere.

    The Robin row uses a ghost node, so the discretisation is second order.
    Returns ``x``, ``s`` and ``v`` of shape ``(nx, ns)``.
    """
    x = np.linspace(0.0, l, nx)
    s = np.linspace(0.0, height, ns)
    hx, hs = x[1] - x[0], s[1] - s[0]
    ni, nj = nx - 2, ns - 1  # unknowns: interior x, s = 0 .. height - hs
    idx = np.arange(ni * nj).reshape(ni, nj)
    rows, cols, vals = [], [], []
    rhs = np.zeros(ni * nj)
    cx, cs = 1.0 / hx**2, 1.0 / hs**2
    for i in range(ni):
        for j in range(nj):
            r = idx[i, j]
            diag = -2 * cx - 2 * cs
            # x neighbours
            for di in (-1, 1):
                ii = i + di
                if 0 <= ii < ni:
                    rows.append(r); cols.append(idx[ii, j]); vals.append(cx)
                else:
                    rhs[r] -= cx * 1.0
            # s neighbours
            if j == 0:
                rows.append(r); cols.append(idx[i, 1] if nj > 1 else r); vals.append(2 * cs)
                diag += 2 * cs * hs * alpha
            else:
                rows.append(r); cols.append(idx[i, j - 1]); vals.append(cs)
            if j + 1 < nj:
                if j != 0:
                    rows.append(r); cols.append(idx[i, j + 1]); vals.append(cs)
            else:
                rhs[r] -= cs * 1.0
            rows.append(r); cols.append(r); vals.append(diag)
    Amat = sparse.csr_matrix((vals, (rows, cols)), shape=(ni * nj, ni * nj))
    sol = spsolve(Amat.tocsc(), rhs)
    v = np.ones((nx, ns))
    v[1:-1, :-1] = sol.reshape(ni, nj)
    return x, s, v


def build_extension_field(candidate: Candidate, params: CalibrationParams, *, outer_height: float,
                          k: float | None = None, capacity: float | None = None,
                          nx: int = 257, ns: int | None = None) -> ExtensionBlock:
    """Robin potentials ``v^_i`` on ``[0, l] x [k, b]`` and the outer graph field.

    ``alpha = M / (1 - M k)``; the problem is coercive iff ``alpha`` is below
    ``K(Gamma_i, Omega'_i minus U')``, computed here from the rectangle
    formula unless ``capacity`` is given.  ``delta`` is capped by
    ``(4 |grad u| + 2 |grad v^| / v^)^{-1}`` and kept inside the families
    ``A_1``/``A_7`` at ``eta = -+k``.
    """
    from .steklov_capacity import rectangle_K

    if params.variant != "graph":
        raise ValueError("the extension belongs to the graph variant")
    chart = candidate.chart
    if chart.curvature.k > 1e-12:
        raise NotImplementedError("extension implemented for straight curves only")
    l = chart.length
    k = params.halfwidth if k is None else float(k)
    M = params.M
    if not M * k < 1:
        raise ExtensionError(f"M k = {M * k:.4g} >= 1")
    alpha = M / (1.0 - M * k)
    height = outer_height - k
    if height <= 0:
        raise ExtensionError("outer domain does not reach beyond the tube")
    Kc = rectangle_K(l, height) if capacity is None else float(capacity)
    if not alpha < Kc:
        raise ExtensionError(f"coercivity violated: M/(1-Mk) = {alpha:.6g} >= K = {Kc:.6g}")
    if ns is None:
        ns = max(17, int(round(height / (l / (nx - 1)))) + 1)
    x, s, v = _robin_rectangle(l, height, alpha, nx, ns)
    hs = s[1] - s[0]
    dv = (-3 * v[:, 0] + 4 * v[:, 1] - v[:, 2]) / (2 * hs)
    inner = slice(nx // 10, nx - nx // 10)
    robin = float(np.max(np.abs(-dv[inner] / v[inner, 0] - alpha)))
    gx, gs = np.gradient(v, x[1] - x[0], hs, edge_order=2)
    X, Sg = np.meshgrid(x, s, indexing="ij")
    cap = np.inf
    for i, u in ((1, candidate.u1), (2, candidate.u2)):
        eta = (-1.0 if i == 1 else 1.0) * (k + Sg)
        ux, uy = u.grad(X, eta)
        dens = 4 * np.hypot(ux, uy) + 2 * np.hypot(gx, gs) / v
        cap = min(cap, float(1.0 / np.max(dens)))
    delta = min(cap, 0.5 * params.eps * (1.0 - M * k))
    return ExtensionBlock(candidate, alpha, k, outer_height, delta, s, x, v, Kc, robin, 2.0 * delta * robin)


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass
class CalibrationResult:
    field: CalibrationField
    report: object
    history: list


def calibrate(
    candidate: Candidate,
    variant: str = "dirichlet",
    *,
    capacity: float | None = None,
    grid: tuple[int, int] = (64, 64),
    st_samples: int = 64,
    eps_floor: float = 1e-4,
    max_strip_halvings: int = 4,
    verify_kwargs: dict | None = None,
    outer_height: float | None = None,
) -> CalibrationResult:
    """Build and verify, halving ``eps`` (or the strip) until the verifier passes.

    When the worst violation sits in the outer half of the strip the strip is
    halved first; otherwise ``eps`` is halved and ``n`` rebuilt.  Raises
    :class:`BuildError` naming the worst condition once ``eps`` drops below
    ``eps_floor``.
    """
    from .calibration_verify import verify_field

    verify_kwargs = dict(verify_kwargs or {})
    params = select_parameters(candidate, variant, capacity=capacity)
    history: list[dict] = []
    strip_halvings = 0
    while True:
        entry = {"eps": params.eps, "halfwidth": params.halfwidth}
        try:
            fld = assemble_field(candidate, params)
            if variant == "graph" and outer_height is not None:
                fld.extension = build_extension_field(candidate, fld.params, outer_height=outer_height)
            rep = verify_field(fld, candidate, grid=grid, st_samples=st_samples, **verify_kwargs)
        except (RiccatiBlowup, DomainShrink, KernelError) as exc:
            entry.update(status="build-error", reason=str(exc))
            history.append(entry)
            log.info("eps=%.4g: %s", params.eps, exc)
            rep = None
        if rep is not None:
            entry.update(status="pass" if rep.passed else "fail", worst=rep.worst_condition())
            history.append(entry)
            if rep.passed:
                return CalibrationResult(fld, rep, history)
            near_edge = rep.worst_near_edge()
            if near_edge and strip_halvings < max_strip_halvings:
                strip_halvings += 1
                params = replace(params, halfwidth=0.5 * params.halfwidth)
                continue
        new_eps = 0.5 * params.eps
        if new_eps < eps_floor:
            worst = history[-1].get("worst") if history else None
            raise BuildError(f"eps floor {eps_floor} reached without a passing field (worst: {worst})", worst,
                             history)
        params = select_parameters(candidate, variant, eps=new_eps, capacity=capacity, M=params.M)
        strip_halvings = 0
