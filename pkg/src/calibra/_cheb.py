"""Small Chebyshev utilities shared by the curve, kernel and builder modules.

Everything here works with :class:`numpy.polynomial.Chebyshev` objects, which
already evaluate at complex arguments.  That is the whole trick behind the
analytic continuations used throughout the package.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.polynomial import Chebyshev
from scipy import fft

__all__ = [
    "adaptive_interpolate",
    "chop",
    "bernstein_rho",
    "ellipse_halfwidth",
    "lobatto_nodes",
    "lobatto_coefficients",
]

_TAIL = 1e-15


def _tail_small(coef: np.ndarray, rel: float) -> bool:
    scale = max(np.max(np.abs(coef)), 1e-300)
    tail = np.abs(coef[-max(4, len(coef) // 16):])
    return bool(np.max(tail) <= rel * scale)


def adaptive_interpolate(
    func: Callable[[np.ndarray], np.ndarray],
    domain: tuple[float, float],
    *,
    min_deg: int = 16,
    max_deg: int = 1024,
    rel: float = 1e-14,
) -> Chebyshev:
    """Interpolate ``func`` on ``domain``, doubling the degree until the tail is negligible.

    Values are taken at Chebyshev-Lobatto points and transformed with a DCT,
    which keeps the rounding floor near machine precision.  The series is then
    chopped where the coefficients reach that floor, so derivatives do not
    amplify noise.  If ``max_deg`` is reached the last attempt is returned.
    """
    deg = min_deg
    while True:
        x = lobatto_nodes(deg, domain)
        coef = lobatto_coefficients(np.asarray(func(x)))
        if _tail_small(coef, rel) or deg >= max_deg:
            break
        deg *= 2
    return Chebyshev(chop(coef), domain=list(domain))


def chop(coef: np.ndarray, floor: float = 4e-16) -> np.ndarray:
    """Drop trailing coefficients that sit at the rounding floor."""
    coef = np.asarray(coef)
    a = np.abs(coef)
    scale = max(a.max(initial=0.0), 1e-300)
    env = np.maximum.accumulate(a[::-1])[::-1]
    keep = np.nonzero(env > floor * scale * max(1.0, np.sqrt(coef.size)))[0]
    last = int(keep[-1]) + 1 if keep.size else 1
    return coef[:last].copy()


def bernstein_rho(coef: np.ndarray) -> float:
    """Estimate the Bernstein-ellipse parameter from the decay of ``coef``.

    A least-squares line is fitted to ``log|c_k|`` over the coefficients that
    sit above the rounding floor; ``rho = exp(-slope)``.  Series with fewer
    than four significant coefficients are treated as polynomials (entire).
    """
    a = np.abs(np.asarray(coef))
    if a.size == 0:
        return np.inf
    scale = a.max()
    if scale == 0.0:
        return np.inf
    sig = np.nonzero(a > 1e-13 * scale)[0]
    if sig.size < 4 or sig[-1] < 4:
        return np.inf
    k = np.arange(sig[-1] + 1)
    mask = a[: sig[-1] + 1] > 1e-13 * scale
    # Use the upper envelope: odd/even cancellations create spurious zeros.
    env = np.maximum.accumulate(a[: sig[-1] + 1][::-1])[::-1]
    slope = np.polyfit(k[mask], np.log(env[mask]), 1)[0]
    if slope >= 0:
        return 1.0
    return float(np.exp(-slope))


def ellipse_halfwidth(cheb: Chebyshev) -> float:
    """Half-minor axis (in domain units) of the estimated convergence ellipse."""
    rho = bernstein_rho(cheb.coef)
    if not np.isfinite(rho):
        return np.inf
    a, b = cheb.domain
    return 0.5 * (b - a) * 0.5 * (rho - 1.0 / rho)


def lobatto_nodes(n: int, domain: tuple[float, float]) -> np.ndarray:
    """Chebyshev-Lobatto points on ``domain`` in increasing order (``n+1`` points)."""
    a, b = domain
    x = -np.cos(np.pi * np.arange(n + 1) / n)
    return 0.5 * (a + b) + 0.5 * (b - a) * x


def lobatto_coefficients(values: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of the interpolant through Lobatto-point ``values``.

    ``values`` has the node axis first and follows :func:`lobatto_nodes`
    ordering (increasing x).  Uses a type-I DCT, so the cost is ``O(n log n)``
    per column.
    """
    v = np.asarray(values)[::-1]  # cos(pi j / n) is decreasing in x
    n = v.shape[0] - 1
    c = fft.dct(v, type=1, axis=0) / n
    c[0] *= 0.5
    c[-1] *= 0.5
    return c
