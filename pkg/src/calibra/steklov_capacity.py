"""The capacity ``K(Gamma, A)``: first mixed Steklov-Dirichlet eigenvalue by P1 finite elements.

``K(Gamma, A) = inf { int_A |grad v|^2 : int_Gamma v^2 = 1, v = 0 on dA minus Gamma }``.
The discrete problem ``A v = lambda B v`` has a stiffness matrix ``A`` and a
boundary mass ``B`` supported on ``Gamma``.  Inverse iteration solves the
full system with right-hand side ``B v``, which applies the inverse of the
trace Schur complement without forming it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.spatial import Delaunay
from shapely.geometry import LineString, Point, Polygon
from shapely import prepared

__all__ = [
    "SteklovError",
    "Mesh",
    "RectangleDomain",
    "PolygonDomain",
    "half_neighbourhood",
    "SteklovResult",
    "compute_K",
    "rectangle_K",
    "TraceData",
    "SufficientVerdict",
    "sufficient_condition",
    "thin_domain_h",
    "BlowupRow",
    "blowup_study",
]

MAX_NODES = 1_000_000


class SteklovError(ValueError):
    """Degenerate marking, non-admissible split or oversized mesh."""


# ---------------------------------------------------------------------------
# Meshes and domains
# ---------------------------------------------------------------------------


@dataclass
class Mesh:
    nodes: np.ndarray  # (n, 2)
    tris: np.ndarray  # (m, 3)
    gamma_edges: np.ndarray  # (e, 2) node indices
    dirichlet: np.ndarray  # (n,) bool
    boundary: np.ndarray  # (n,) bool
    h: float

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])


@dataclass(frozen=True)
class RectangleDomain:
    """``(x0, x0 + a) x (y0, y0 + b)`` with ``Gamma`` a segment ``[g0, g1] x {y0}`` of the bottom edge.

    Structured meshes are aligned to the global lattice ``h Z^2`` so that
    nested rectangles give nested discrete spaces.
    """

    a: float
    b: float
    gamma: tuple[float, float] | None = None
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def gamma_interval(self) -> tuple[float, float]:
        x0 = self.origin[0]
        return self.gamma if self.gamma is not None else (x0, x0 + self.a)

    @property
    def gamma_length(self) -> float:
        g0, g1 = self.gamma_interval
        return g1 - g0

    def mesh(self, h: float) -> Mesh:
        x0, y0 = self.origin
        nx = int(round(self.a / h))
        ny = int(round(self.b / h))
        if nx < 2 or ny < 1:
            raise SteklovError(f"mesh size h={h} too coarse for a {self.a} x {self.b} rectangle")
        if (nx + 1) * (ny + 1) > MAX_NODES:
            raise SteklovError(f"mesh would exceed {MAX_NODES} nodes")
        xs = x0 + self.a * np.arange(nx + 1) / nx
        ys = y0 + self.b * np.arange(ny + 1) / ny
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
        p00, p10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
        p01, p11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
        tris = np.concatenate([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
        boundary = np.zeros(nodes.shape[0], bool)
        boundary[idx[0, :]] = boundary[idx[-1, :]] = True
        boundary[idx[:, 0]] = boundary[idx[:, -1]] = True
        g0, g1 = self.gamma_interval
        tol = 1e-12 * max(1.0, abs(g1))
        bottom = idx[:, 0]
        on_gamma = (xs >= g0 - tol) & (xs <= g1 + tol)
        gnodes = bottom[on_gamma]
        if gnodes.size < 2:
            raise SteklovError("Gamma marking contains fewer than two mesh nodes (measure zero)")
        gamma_edges = np.column_stack([gnodes[:-1], gnodes[1:]])
        open_gamma = np.zeros(nodes.shape[0], bool)
        open_gamma[gnodes[1:-1]] = True
        return Mesh(nodes, tris, gamma_edges, boundary & ~open_gamma, boundary, self.a / nx)


@dataclass(frozen=True)
class PolygonDomain:
    """Simple polygon with ``Gamma`` a polyline on its boundary (unstructured Delaunay mesh)."""

    vertices: tuple[tuple[float, float], ...]
    gamma: tuple[tuple[float, float], ...]

    @property
    def gamma_length(self) -> float:
        return float(LineString(self.gamma).length)

    def mesh(self, h: float) -> Mesh:
        poly = Polygon(self.vertices)
        if not poly.is_valid or poly.area <= 0:
            raise SteklovError("polygon is not simple or has zero area")
        gline = LineString(self.gamma)
        if gline.length <= 0:
            raise SteklovError("Gamma marking has zero length")
        if gline.difference(poly.boundary.buffer(1e-9)).length > 1e-9:
            raise SteklovError("Gamma is not contained in the polygon boundary")
        # boundary samples, every vertex kept
        verts = np.asarray(self.vertices, float)
        bpts = []
        for p, q in zip(verts, np.roll(verts, -1, axis=0)):
            n = max(1, int(math.ceil(np.hypot(*(q - p)) / h)))
            t = np.arange(n)[:, None] / n
            bpts.append(p + t * (q - p))
        bpts = np.concatenate(bpts)
        xmin, ymin, xmax, ymax = poly.bounds
        xs = np.arange(xmin + 0.5 * h, xmax, h)
        ys = np.arange(ymin + 0.5 * h, ymax, h)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        cand = np.column_stack([X.ravel(), Y.ravel()])
        if cand.shape[0] + bpts.shape[0] > MAX_NODES:
            raise SteklovError(f"mesh would exceed {MAX_NODES} nodes")
        inner = prepared.prep(poly.buffer(-0.45 * h))
        keep = np.array([inner.contains(Point(p)) for p in cand], dtype=bool) if cand.size else np.zeros(0, bool)
        nodes = np.concatenate([bpts, cand[keep]])
        tri = Delaunay(nodes)
        tris = tri.simplices
        cent = nodes[tris].mean(axis=1)
        ppoly = prepared.prep(poly)
        inside = np.array([ppoly.contains(Point(c)) for c in cent], dtype=bool)
        tris = tris[inside]
        e1 = nodes[tris[:, 1]] - nodes[tris[:, 0]]
        e2 = nodes[tris[:, 2]] - nodes[tris[:, 0]]
        area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        tris = tris[area > 1e-14 * h * h]
        nb = bpts.shape[0]
        boundary = np.zeros(nodes.shape[0], bool)
        boundary[:nb] = True
        # Gamma edges: consecutive boundary samples whose midpoint lies on the Gamma polyline
        ring = np.arange(nb)
        edges = np.column_stack([ring, np.roll(ring, -1)])
        mids = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
        on = np.array([gline.distance(Point(m)) < 1e-9 * max(1.0, gline.length) for m in mids], dtype=bool)
        gamma_edges = edges[on]
        if gamma_edges.shape[0] == 0:
            raise SteklovError("Gamma marking contains no mesh edge (measure zero)")
        cnt = np.bincount(gamma_edges.ravel(), minlength=nodes.shape[0])
        open_gamma = cnt == 2  # interior nodes of the Gamma polyline
        return Mesh(nodes, tris, gamma_edges, boundary & ~open_gamma, boundary, h)


def half_neighbourhood(l: float, delta: float, *, side: int = 1, arc_points: int | None = None,
                       h: float | None = None) -> PolygonDomain:
    """Upper (``side=1``) half of the ``delta``-neighbourhood of ``[0, l] x {0}``, cut by the line ``y = 0``.

    The quarter-disc end caps are polygonal with vertex spacing about ``h``.
    """
    if arc_points is None:
        step = delta / 8 if h is None else h
        arc_points = max(4, int(math.ceil(0.5 * math.pi * delta / step)))
    th = np.linspace(0.0, 0.5 * math.pi, arc_points + 1)
    right = [(l + delta * math.cos(t), side * delta * math.sin(t)) for t in th]
    left = [(-delta * math.cos(t), side * delta * math.sin(t)) for t in th[::-1]]
    verts = [(-delta, 0.0), (0.0, 0.0), (l, 0.0)] + right + left[:-1]
    # drop duplicates produced by the arc endpoints
    clean = []
    for v in verts:
        if not clean or np.hypot(v[0] - clean[-1][0], v[1] - clean[-1][1]) > 1e-14:
            clean.append(v)
    if np.hypot(clean[0][0] - clean[-1][0], clean[0][1] - clean[-1][1]) < 1e-14:
        clean.pop()
    if side < 0:
        clean = clean[::-1]
    return PolygonDomain(tuple(clean), ((0.0, 0.0), (l, 0.0)))


# ---------------------------------------------------------------------------
# Eigenproblem
# ---------------------------------------------------------------------------


def _assemble(mesh: Mesh):
    p = mesh.nodes[mesh.tris]  # (m, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * np.abs(det)
    # gradients of the barycentric functions
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)  # opposite edges
    g = np.stack([-e[..., 1], e[..., 0]], axis=-1) / det[:, None, None]
    K = area[:, None, None] * np.einsum("mik,mjk->mij", g, g)
    rows = np.repeat(mesh.tris, 3, axis=1).ravel()
    cols = np.tile(mesh.tris, (1, 3)).ravel()
    n = mesh.n_nodes
    A = sparse.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))
    ge = mesh.gamma_edges
    L = np.hypot(*(mesh.nodes[ge[:, 1]] - mesh.nodes[ge[:, 0]]).T)
    loc = L[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    r = np.repeat(ge, 2, axis=1).ravel()
    c = np.tile(ge, (1, 2)).ravel()
    B = sparse.csr_matrix((loc.ravel(), (r, c)), shape=(n, n))
    return A, B


@dataclass
class SteklovResult:
    """Discrete ``K`` at mesh size ``h`` with the half-size value and a Richardson estimate."""

    K: float
    h: float
    eigenfunction: np.ndarray = field(repr=False)
    mesh: Mesh = field(repr=False)
    residual: float
    iterations: int
    positive: bool
    trace_norm: float
    dirichlet_energy: float
    K_half: float | None = None
    K_richardson: float | None = None

    @property
    def error_estimate(self) -> float | None:
        return None if self.K_half is None else abs(self.K - self.K_half) * 4.0 / 3.0

    def as_dict(self) -> dict:
        return {"K": self.K, "h": self.h, "K_half": self.K_half, "K_richardson": self.K_richardson,
                "error_estimate": self.error_estimate, "residual": self.residual, "iterations": self.iterations,
                "eigenfunction_positive": self.positive, "trace_norm": self.trace_norm,
                "dirichlet_energy": self.dirichlet_energy, "nodes": self.mesh.n_nodes}


def _solve_mesh(mesh: Mesh, tol: float, maxiter: int) -> SteklovResult:
    A, B = _assemble(mesh)
    free = np.nonzero(~mesh.dirichlet)[0]
    Af = A[free][:, free].tocsc()
    Bf = B[free][:, free].tocsr()
    lu = splu(Af)
    x = np.ones(free.size)
    lam_old = np.inf
    it = 0
    for it in range(1, maxiter + 1):
        y = lu.solve(Bf @ x)
        nrm = math.sqrt(float(y @ (Bf @ y)))
        y /= nrm
        dx = y - x
        x = y
        lam = float(x @ (Af @ x))
        if abs(lam - lam_old) <= tol * lam and math.sqrt(abs(float(dx @ (Bf @ dx)))) <= tol:
            break
        lam_old = lam
    x *= np.sign(x.sum())
    res = float(np.linalg.norm(Af @ x - lam * (Bf @ x)) / max(1e-300, np.linalg.norm(Af @ x)))
    v = np.zeros(mesh.n_nodes)
    v[free] = x
    interior = ~mesh.boundary
    positive = bool(np.all(v[interior] > 0)) and bool(np.all(v >= -1e-14))
    trace = float(v @ (B @ v))
    energy = float(v @ (A @ v))
    return SteklovResult(lam, mesh.h, v, mesh, res, it, positive, trace, energy)


def compute_K(domain, h: float = 1.0 / 64, *, richardson: bool = True, tol: float = 1e-10,
              maxiter: int = 500) -> SteklovResult:
    """First eigenvalue of ``Delta v = 0``, ``dv/dnu = lambda v`` on ``Gamma``, ``v = 0`` elsewhere.

    Parameters
    ----------
    domain
        :class:`RectangleDomain` or :class:`PolygonDomain` carrying the ``Gamma`` marking.
    h
        Mesh size.  With ``richardson`` the problem is also solved at ``h/2``
        and ``K_richardson = (4 K(h/2) - K(h)) / 3`` is reported.
    """
    res = _solve_mesh(domain.mesh(h), tol, maxiter)
    if richardson:
        fine = _solve_mesh(domain.mesh(0.5 * h), tol, maxiter)
        res.K_half = fine.K
        res.K_richardson = (4.0 * fine.K - res.K) / 3.0
    return res


def rectangle_K(a: float, b: float) -> float:
    """Closed form ``pi / (a tanh(pi b / a))`` for ``Gamma`` the full bottom edge of an ``a x b`` rectangle."""
    if a <= 0 or b <= 0:
        raise ValueError("rectangle sides must be positive")
    return math.pi / (a * math.tanh(math.pi * b / a))


# ---------------------------------------------------------------------------
# Sufficient condition and thin domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceData:
    """Length ``l``, sup-curvature ``k`` and ``||d_tau u_i||_{C^1}`` along ``Gamma``."""

    length: float
    k: float
    c1_norms: tuple[float, float]

    @classmethod
    def from_candidate(cls, candidate) -> "TraceData":
        chart = candidate.chart
        return cls(chart.length, chart.curvature.k, tuple(candidate.c1_norms()))


@dataclass(frozen=True)
class SufficientVerdict:
    lhs: float
    rhs: float
    K: tuple[float, float]
    c: float

    @property
    def ratio(self) -> float:
        return math.inf if self.rhs == 0 else self.lhs / self.rhs

    @property
    def passed(self) -> bool:
        return self.ratio > 1.0

    def as_dict(self) -> dict:
        r = self.ratio
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": r if math.isfinite(r) else "inf", "K": list(self.K),
                "c": self.c, "passed": self.passed}


def _admissible(omega1, omega2, length: float) -> None:
    for om in (omega1, omega2):
        gl = om.gamma_length
        if not gl > 0:
            raise SteklovError("split is not admissible: Gamma has zero length in a component")
        if abs(gl - length) > 1e-9 * max(1.0, length):
            raise SteklovError(f"split is not admissible: Gamma length {gl:.6g} differs from l = {length:.6g}")


def sufficient_condition(trace: TraceData, omega1, omega2, *, c: float = 78.0, h: float | None = None,
                         K: tuple[float, float] | None = None) -> SufficientVerdict:
    """Compare ``min_i K(Gamma, Omega_i) / (1 + l^2 + l^2 k^2)`` with ``c sum ||d_tau u_i||^2_{C^1}``.

    The two components carry the same ``Gamma`` (checked by length).  When
    ``K`` is given the eigenvalue solves are skipped; otherwise the mesh size
    defaults to ``|Gamma| / 64``, so the cost does not grow with the domain.
    """
    if not isinstance(trace, TraceData):
        trace = TraceData.from_candidate(trace)
    _admissible(omega1, omega2, trace.length)
    if K is None:
        ks = []
        for om in (omega1, omega2):
            hh = h if h is not None else om.gamma_length / 64
            ks.append(compute_K(om, hh, richardson=False).K)
        K = (ks[0], ks[1])
    l, k = trace.length, trace.k
    lhs = min(K) / (1.0 + l * l + l * l * k * k)
    rhs = c * float(sum(v * v for v in trace.c1_norms))
    return SufficientVerdict(lhs, rhs, (float(K[0]), float(K[1])), c)


def thin_domain_h(lip: float, M: float, l: float, k: float = 0.0, *, c: float = 78.0) -> float:
    """Width below which the thin-domain capacity bound implies the sufficient condition.

    Solves ``(1 + lip)^{-3/2} pi / (2 h) = c M^2 (1 + l^2 + l^2 k^2)`` for ``h``; any
    strictly smaller width satisfies the strict inequality, for every height.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    return (1.0 + lip) ** -1.5 * math.pi / (2.0 * c * M * M * (1.0 + l * l + l * l * k * k))


# ---------------------------------------------------------------------------
# Blow-up of K on shrinking neighbourhoods
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlowupRow:
    delta: float
    K: float | None
    K_times_delta: float | None
    nodes: int
    note: str = ""

    def as_dict(self) -> dict:
        return {"delta": self.delta, "K": self.K, "K_times_delta": self.K_times_delta, "nodes": self.nodes,
                "note": self.note}


def blowup_study(l: float = 1.0, deltas: Sequence[float] = (0.5, 0.25, 0.125, 0.0625, 0.03125), *,
                 cells_per_delta: int = 8, side: int = 1) -> list[BlowupRow]:
    """``K(Gamma, Gamma_delta^+)`` for a straight ``Gamma`` of length ``l`` over shrinking ``delta``.

    The half-neighbourhood is the rectangle ``[0, l] x (0, delta)`` plus
    quarter-disc caps bounded below by the extension line.  The mesh size is
    ``delta / cells_per_delta``.  Rows whose mesh would exceed the node cap
    report ``K = None`` with a note.
    """
    rows = []
    for d in deltas:
        h = d / cells_per_delta
        dom = half_neighbourhood(l, d, side=side, h=h)
        try:
            res = compute_K(dom, h, richardson=False)
        except SteklovError as exc:
            rows.append(BlowupRow(float(d), None, None, 0, str(exc)))
            continue
        rows.append(BlowupRow(float(d), res.K, res.K * d, res.mesh.n_nodes))
    return rows
