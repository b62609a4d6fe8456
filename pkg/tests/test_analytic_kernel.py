import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibra.analytic_kernel import (
    KernelError,
    PiecewiseAffineColumn,
    flow_pq,
    harmonic_from_cauchy,
    solve_transport,
    vertical_quadrature,
)

XI = np.linspace(0.0, 1.0, 1000)
GRID = np.meshgrid(np.linspace(0.05, 0.95, 17), np.linspace(-0.2, 0.2, 9), indexing="ij")


def test_cauchy_zero_one_gives_eta():
    w = harmonic_from_cauchy(0.0, 1.0, 0.3)
    np.testing.assert_allclose(w.value(*GRID), GRID[1], atol=1e-14)


def test_cauchy_square():
    w = harmonic_from_cauchy(lambda x: x**2, 0.0, 0.3)
    np.testing.assert_allclose(w.value(*GRID), GRID[0] ** 2 - GRID[1] ** 2, atol=1e-13)


def test_cauchy_cos_sinh_and_laplacian():
    w = harmonic_from_cauchy(0.0, np.cos, 0.3)
    np.testing.assert_allclose(w.value(*GRID), np.cos(GRID[0]) * np.sinh(GRID[1]), atol=1e-13)
    # second derivatives from the jet: u_xixi + u_etaeta vanishes identically
    hxx, _, hyy = w.hessian(*GRID)
    assert np.max(np.abs(hxx + hyy)) <= 1e-10
    assert np.max(np.abs(w.laplacian_residual(*GRID, 1e-2))) <= 1e-6


def test_cauchy_reproduces_data_on_axis():
    f = lambda x: np.exp(x) * np.sin(3 * x)
    g = lambda x: 1 + x**3
    w = harmonic_from_cauchy(f, g, 0.2)
    np.testing.assert_allclose(w.value(XI, 0 * XI), f(XI), atol=1e-10)
    np.testing.assert_allclose(w.grad(XI, 0 * XI)[1], g(XI), atol=1e-10)


def test_cauchy_radius_too_small_reports_tail():
    # a pole at distance 0.05 from the interval limits the continuation
    with pytest.raises(KernelError, match="coefficient tail"):
        harmonic_from_cauchy(lambda x: 1.0 / (x**2 + 0.05**2), 0.0, 0.5, domain=(-1.0, 1.0))


def test_transport_vertical_drift():
    init = lambda x: np.sin(2 * x) + 1
    sol = solve_transport(lambda x, e: (0 * x, 1 + 0 * x), None, init, footpoints=(0, 1), eta_max=0.2)
    np.testing.assert_allclose(sol(*GRID), init(GRID[0]), atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 20.0), st.floats(0.0, 0.05), st.floats(0.5, 2.0), st.floats(-3.0, 3.0))
def test_transport_constant_coefficients(lam, eps, M, mu_minus_omega):
    # drift (0, lam (1 - 2 eps M)), source mu - omega: beta = init + (mu - omega) eta / (lam (1 - 2 eps M))
    a = lam * (1 - 2 * eps * M)
    init = lambda x: 2 + x
    sol = solve_transport(lambda x, e: (0 * x, a + 0 * x), lambda x, e: mu_minus_omega + 0 * x, init,
                          footpoints=(0, 1), eta_max=0.2)
    expect = init(GRID[0]) + mu_minus_omega * GRID[1] / a
    np.testing.assert_allclose(sol(*GRID), expect, atol=1e-10)


def test_transport_generic_residual_and_reintegration():
    w = harmonic_from_cauchy(lambda x: 0.1 * np.sin(x), lambda x: 1 + 0.2 * x, 0.3)

    def drift(x, e):
        gx, gy = w.grad(x, e)
        return 3 * gx, 3 * gy

    sol = solve_transport(drift, lambda x, e: 1.5 + 0.3 * np.cos(x + e), lambda x: 2 + x,
                          footpoints=(-0.2, 1.2), eta_max=0.2)
    assert np.max(np.abs(sol.residual(*GRID))) <= 1e-8
    np.testing.assert_allclose(sol(XI, 0 * XI), 2 + XI, atol=1e-12)
    for k in (0, 40, 128):
        assert sol.reintegrate(k, 0.2) <= 1e-9
        assert sol.reintegrate(k, -0.2) <= 1e-9


def test_transport_rejects_characteristic_axis():
    with pytest.raises(KernelError, match="characteristic"):
        solve_transport(lambda x, e: (1 + 0 * x, 0 * x), None, lambda x: x, footpoints=(0, 1), eta_max=0.1)


def test_flow_identity_for_eta():
    p, q = flow_pq(harmonic_from_cauchy(0.0, 1.0, 0.3), footpoints=(0, 1), eta_max=0.2)
    np.testing.assert_allclose(p(*GRID), GRID[0], atol=1e-12)
    np.testing.assert_allclose(q(*GRID), GRID[0], atol=1e-12)


def test_flow_inverse_consistency():
    w = harmonic_from_cauchy(0.0, lambda x: np.cos(x) + 1, 0.3)  # w = cos(xi) sinh(eta) + eta
    p, q = flow_pq(w, footpoints=(-0.3, 1.3), eta_max=0.2)
    xi, eta = GRID
    assert np.max(np.abs(p(q(xi, eta), eta) - xi)) <= 1e-8
    h = 1e-5
    dq = (q(XI + h, 0 * XI) - q(XI - h, 0 * XI)) / (2 * h)
    np.testing.assert_allclose(dq, 1.0, atol=1e-8)


# -- vertical quadrature -----------------------------------------------------


class _Const:
    """Synthetic two-region field: (1, 2) on [0, 1], (-3, 0.5) on [1, 3], nothing outside."""

    def column(self, xi, eta):
        P = np.size(xi)
        b = np.tile([0.0, 1.0, 3.0], (P, 1))
        p = np.tile([[1.0, 2.0], [-3.0, 0.5]], (P, 1, 1))
        return PiecewiseAffineColumn(b, p, np.zeros_like(p))


def test_quadrature_two_regions_by_hand():
    I = vertical_quadrature(_Const(), [0.1], [0.0], [-1.0], [5.0])
    np.testing.assert_allclose(I.reshape(2), [1 * 1 - 3 * 2, 2 * 1 + 0.5 * 2], atol=0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 4), st.floats(-2, 4), st.floats(-2, 4))
def test_quadrature_additive_and_antisymmetric(s, m, t):
    f = _Const()
    I = lambda a, b: vertical_quadrature(f, [0.1], [0.0], [a], [b]).reshape(2)
    np.testing.assert_allclose(I(s, t), I(s, m) + I(m, t), atol=1e-12)
    np.testing.assert_allclose(I(s, t), -I(t, s), atol=1e-12)
    np.testing.assert_allclose(I(s, s), 0.0, atol=0)


def test_affine_piece_is_integrated_exactly():
    # p + q (z - c) on [0, 2] with c = 0.5: integral over [0, 2] is 2p + q (2 - 1)
    col = PiecewiseAffineColumn(np.array([[0.0, 2.0]]), np.array([[[1.0, -1.0]]]), np.array([[[3.0, 2.0]]]),
                                center=np.array([[0.5]]))
    np.testing.assert_allclose(col.integral(np.array([[0.0]]), np.array([[2.0]]))[0, 0], [2 + 3, -2 + 2])


def test_pure_jump_unit_vertical_integral(pure_jump_field, pure_jump):
    xi = np.linspace(0.05, 0.95, 7)
    t = pure_jump.traces(xi)
    I = vertical_quadrature(pure_jump_field, xi, 0 * xi, t["u1"], t["u2"]).reshape(-1, 2)
    np.testing.assert_allclose(I, np.tile([0.0, 1.0], (7, 1)), atol=1e-12)


def test_additivity_at_region_boundaries(circle_field):
    xi = np.array([0.3, 0.7])
    eta = np.array([0.002, -0.003])
    loc = circle_field.local(xi, eta)
    b = circle_field.bounds(loc)
    s, t = b[:, 0] - 0.1, b[:, -1] + 0.1
    whole = vertical_quadrature(circle_field, xi, eta, s, t)
    mids = 0.5 * (b[:, 1:] + b[:, :-1])
    for j in range(mids.shape[1]):
        m = mids[:, j]
        parts = vertical_quadrature(circle_field, xi, eta, s, m) + vertical_quadrature(circle_field, xi, eta, m, t)
        np.testing.assert_allclose(parts, whole, atol=1e-12)
