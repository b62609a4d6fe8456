import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibra.curve_geometry import (
    ChartError,
    CurveError,
    arc_length_reparameterize,
    build_chart,
    closed_form_curve,
    curvature_profile,
    series_curve,
    to_cartesian,
)


def _unit(x, y, dom, **kw):
    return arc_length_reparameterize(closed_form_curve(x, y, dom, **kw))


def test_segment_rescales_to_arc_length():
    c = _unit("2*t", "0", (0, 1))
    assert c.domain == pytest.approx((0.0, 2.0))
    s = np.linspace(0, 2, 11)
    np.testing.assert_allclose(c.point(s), s, atol=1e-12)


def test_circle_radius_two_reparameterization():
    c = _unit("2*cos(t)", "2*sin(t)", (0, np.pi))
    assert c.domain[1] == pytest.approx(2 * np.pi, rel=1e-12)
    s = np.linspace(0, 2 * np.pi, 33)
    np.testing.assert_allclose(c.point(s), 2 * np.exp(1j * s / 2), atol=1e-10)


def test_ellipse_quarter_arc_has_unit_speed():
    c = _unit("2*cos(t)", "sin(t)", (0, np.pi / 2))
    s = np.linspace(*c.domain, 1000)
    assert np.max(np.abs(c.speed(s) - 1.0)) <= 1e-9
    # the arc length of the quarter ellipse is the complete elliptic integral 2 E(3/4)
    from scipy.special import ellipe

    assert c.domain[1] - c.domain[0] == pytest.approx(2 * ellipe(0.75), rel=1e-11)


def test_vanishing_speed_is_rejected_with_location():
    with pytest.raises(CurveError, match="speed"):
        arc_length_reparameterize(closed_form_curve("t**3", "0", (-1, 1)))


def test_straight_curvature_is_zero():
    prof = curvature_profile(_unit("t", "0", (0, 1)))
    assert prof.k == 0.0
    assert np.all(prof(np.linspace(0, 1, 9)) == 0)


def test_circle_radius_two_curvature_sign():
    # counter-clockwise circle: nu = (-y', x') points inward and curv = -1/2
    prof = curvature_profile(_unit("2*cos(t)", "2*sin(t)", (0, np.pi)))
    np.testing.assert_allclose(prof(np.linspace(0, 2 * np.pi, 17)), -0.5, atol=1e-12)
    assert prof.k == pytest.approx(0.5)


@pytest.mark.parametrize("xy", [("t", "t**2/3"), ("2*cos(t)", "sin(t)"), ("t", "sin(t)/2")])
def test_curvature_squared_matches_acceleration(xy):
    prof = curvature_profile(_unit(*xy, (0, 1)))
    assert prof.curvq_residual <= 1e-10


def test_line_chart_is_identity():
    ch = build_chart(_unit("t", "0", (0, 1)))
    xi, eta = np.meshgrid(np.linspace(0, 1, 5), np.linspace(-ch.halfwidth, ch.halfwidth, 5))
    x, y = ch.inverse(xi, eta)
    np.testing.assert_allclose(x, xi, atol=1e-14)
    np.testing.assert_allclose(y, eta, atol=1e-14)
    np.testing.assert_allclose(ch.gamma(xi, eta), 1.0, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(-0.9, 0.9), st.floats(0.0, 1.0))
def test_circle_chart_gamma_closed_form(R, frac, xi0):
    # counter-clockwise circle of radius R: Psi = R exp(i zeta / R) and gamma = exp(-eta / R)
    ch = build_chart(_unit(f"{R}*cos(t/{R})", f"{R}*sin(t/{R})", (0, 1)))
    eta = frac * ch.halfwidth
    assert ch.gamma(xi0, eta) == pytest.approx(np.exp(-eta / R), rel=1e-12)
    assert ch.gamma(xi0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_gamma_is_one_on_curve():
    ch = build_chart(_unit("t", "sin(t)/2", (0, 1)))
    xi = np.linspace(0, ch.length, 1000)
    assert np.max(np.abs(ch.gamma(xi, 0 * xi) - 1)) <= 1e-10


def test_cauchy_riemann_residual_on_sine_like_curve():
    ch = build_chart(_unit("t", "sin(2*t)/4", (0, 1)))
    h = 1e-5
    xi, eta = np.meshgrid(np.linspace(0.05, ch.length - 0.05, 64),
                          np.linspace(-0.9, 0.9, 64) * ch.halfwidth, indexing="ij")

    def d(f, axis):
        if axis == 0:
            return (f(xi + h, eta) - f(xi - h, eta)) / (2 * h)
        return (f(xi, eta + h) - f(xi, eta - h)) / (2 * h)

    X = lambda a, b: ch.inverse(a, b)[0]
    Y = lambda a, b: ch.inverse(a, b)[1]
    assert np.max(np.abs(d(X, 0) - d(Y, 1))) <= 1e-8
    assert np.max(np.abs(d(X, 1) + d(Y, 0))) <= 1e-8


def test_forward_inverts_psi():
    ch = build_chart(_unit("2*cos(t)", "sin(t)", (0.2, 1.2)))
    xi, eta = np.meshgrid(np.linspace(0, ch.length, 21), np.linspace(-1, 1, 7) * ch.halfwidth)
    x, y = ch.inverse(xi, eta)
    a, b = ch.forward(x, y)
    assert np.max(np.abs(a - xi)) <= 1e-9 and np.max(np.abs(b - eta)) <= 1e-9


def test_first_and_second_eta_derivatives_of_gamma():
    ch = build_chart(_unit("t", "t**2/2", (0, 1)))
    xi = np.linspace(0, ch.length, 101)
    h = 1e-4 * ch.halfwidth
    g = lambda e: ch.gamma(xi, e + 0 * xi)
    d1 = (g(h) - g(-h)) / (2 * h)
    np.testing.assert_allclose(d1, ch.curvature(xi), atol=1e-6)
    H = 1e-2 * ch.halfwidth
    d2 = (g(H) - 2 * g(0.0) + g(-H)) / H**2
    np.testing.assert_allclose(d2, ch.curvature(xi) ** 2, atol=1e-4)


def test_halfwidth_beyond_radius_is_rejected():
    curve = arc_length_reparameterize(series_curve([0.5, 0.5], [0.0, 0.0, 0.1], (0, 1)))
    with pytest.raises(ChartError, match="radius"):
        build_chart(curve, halfwidth=10 * curve.radius)


def test_series_curve_matches_closed_form():
    # x = t, y = t^2 on [-1, 1]: t^2 = (T0 + T2) / 2
    a = curvature_profile(arc_length_reparameterize(series_curve([0, 1], [0.5, 0, 0.5], (-1, 1))))
    b = curvature_profile(_unit("t", "t**2", (-1, 1)))
    s = np.linspace(0, a.curve.domain[1], 9)
    np.testing.assert_allclose(a(s), b(s), atol=1e-9)


def test_to_cartesian_identity_chart():
    ch = build_chart(_unit("t", "0", (0, 1)))
    v = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(to_cartesian(v, ch, np.array([0.4]), np.array([0.02])), v, atol=1e-14)


def test_to_cartesian_circle_tangent():
    ch = build_chart(_unit("cos(t)", "sin(t)", (0, 1)))
    xi = np.array([0.3])
    out = to_cartesian(np.array([[1.0, 0.0, 0.0]]), ch, xi, 0 * xi)
    np.testing.assert_allclose(out[0, :2], [-np.sin(0.3), np.cos(0.3)], atol=1e-12)


def test_cartesian_divergence_matches_chart_formula():
    # The mapped field has coordinate components phi / gamma^2, so the chart
    # divergence formula reduces to (d_xi phi^xi + d_eta phi^eta) / gamma^2.
    ch = build_chart(_unit("cos(t)", "sin(t)", (0, 1)))
    fx = lambda a, b: np.sin(a) * (1 + b)
    fe = lambda a, b: a * b**2
    xi0, eta0, h = 0.5, 0.03, 1e-5
    chart_div = ((fx(xi0 + h, eta0) - fx(xi0 - h, eta0)) + (fe(xi0, eta0 + h) - fe(xi0, eta0 - h))) / (
        2 * h * ch.gamma(xi0, eta0) ** 2)

    def cart(x, y):
        a, b = ch.forward(np.array([x]), np.array([y]))
        v = np.array([[fx(a[0], b[0]), fe(a[0], b[0]), 0.0]])
        return to_cartesian(v, ch, a, b)[0]

    x0, y0 = ch.inverse(xi0, eta0)
    k = 1e-5
    div = ((cart(x0 + k, y0)[0] - cart(x0 - k, y0)[0]) + (cart(x0, y0 + k)[1] - cart(x0, y0 - k)[1])) / (2 * k)
    assert div == pytest.approx(chart_div, abs=1e-6)
