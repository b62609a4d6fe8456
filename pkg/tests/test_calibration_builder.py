import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibra.calibration_builder import (
    BuildError,
    ExtensionError,
    GraphWindowError,
    RiccatiBlowup,
    _omegas,
    assemble_field,
    build_extension_field,
    calibrate,
    compute_constants,
    graph_window,
    select_parameters,
    solve_riccati_n,
)
from calibra.calibration_verify import verify_field
from calibra.fixtures import load_fixture
from calibra.steklov_capacity import rectangle_K

XI = np.linspace(0.0, 1.0, 201)


# -- constants ------------------------------------------------------------------


def test_constants_unit_segment():
    c = compute_constants(1.0, 0.0)
    assert c.N == pytest.approx(1 + math.pi / 4, abs=1e-12)
    assert c.N == pytest.approx(1.78540, abs=5e-6)
    assert c.d == pytest.approx(0.16214, abs=5e-6)
    assert c.h == 1.0 and c.c_tilde == 78 and c.c == 78


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0, 1e3))
def test_d_in_unit_interval(l, k):
    assert 0 < compute_constants(l, k).d < 1


def test_c_tilde_sweep_against_sufficient_denominator():
    # 16/d <= 78 (1 + l^2 + l^2 k^2) on the log grid [1e-2, 1e2]^2 and at k = 0
    grid = np.logspace(-2, 2, 81)
    worst = np.inf
    for l in grid:
        for k in np.concatenate([[0.0], grid]):
            d = compute_constants(l, k).d
            worst = min(worst, 78 * (1 + l * l + l * l * k * k) - 16 / d)
    assert worst > 0


def test_defc_denominator_form_fails_for_long_straight_curves():
    # the form with 1 + l^2 k^2 cannot hold for k = 0 and large l: 16/d grows like l^2
    l = 100.0
    assert 78 * (1 + l * l * 0.0) < 16 / compute_constants(l, 0.0).d


def test_graph_h_uses_c1_norms(circle):
    c = compute_constants(1.0, 1.0, circle, "graph")
    n1, n2 = circle.c1_norms()
    assert c.h == pytest.approx(64 / math.pi**2 * (n1**2 + n2**2))


# -- Riccati --------------------------------------------------------------------


def test_riccati_straight_closed_form():
    sol = solve_riccati_n(0.0, 1.0)
    exact = math.pi / 4 * np.tan(math.pi * XI / 4)
    assert np.max(np.abs(sol.tau(XI) - exact)) <= 1e-8
    assert sol.tau(1.0) == pytest.approx(math.pi / 4, abs=1e-12)
    assert sol.sup_tau <= sol.N == pytest.approx(1 + math.pi / 4)
    assert sol.n(0.0) == pytest.approx(1.0, abs=1e-15)
    # n = exp(int tau) = 1 / cos(pi xi / 4)
    np.testing.assert_allclose(sol.n(XI), 1 / np.cos(math.pi * XI / 4), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.0, 3.0))
def test_riccati_constant_curvature(l, k):
    sol = solve_riccati_n(k, l)
    x = np.linspace(0, l, 101)
    b2 = (math.pi / (4 * l)) ** 2 - k * k
    if b2 > 0:
        exact = math.sqrt(b2) * np.tan(math.sqrt(b2) * x)
    else:
        exact = -math.sqrt(-b2) * np.tanh(math.sqrt(-b2) * x)
    np.testing.assert_allclose(sol.tau(x), exact, atol=1e-8)
    assert sol.sup_tau <= sol.comparison_bound + 1e-12
    assert sol.n(0.0) == pytest.approx(1.0, abs=1e-15)


def test_riccati_escape_is_signalled():
    with pytest.raises(RiccatiBlowup, match="eps too large"):
        solve_riccati_n(0.0, 1.0, N=0.5)
    # a closure with a destabilising h blows up before xi = l
    with pytest.raises(RiccatiBlowup):
        solve_riccati_n(0.0, 1.0, closure=lambda x, t: (np.ones_like(t), 3 * t * t + 5.0))


# -- parameters -----------------------------------------------------------------


def test_pure_jump_parameters(pure_jump):
    p = select_parameters(pure_jump, "dirichlet")
    assert p.M == 1.0 and p.lam == 10.0
    om1, om2 = _omegas(pure_jump, p)
    np.testing.assert_allclose(om1(XI, 0 * XI), 1.0, atol=1e-14)
    np.testing.assert_allclose(om2(XI, 0 * XI), 1.0, atol=1e-14)


def test_unit_tangential_slope_gives_margin(circle):
    p = select_parameters(circle, "dirichlet")
    assert p.M == pytest.approx(1.1)
    om1, om2 = _omegas(circle, p)
    t = circle.traces(XI)
    np.testing.assert_allclose(om2(XI, 0 * XI), 1.21 - t["dxi2"] ** 2, atol=1e-12)
    assert np.min(om1(XI, 0 * XI)) >= 0.21 - 1e-12 and np.min(om2(XI, 0 * XI)) >= 0.21 - 1e-12


def test_mu_bound_example(pure_jump):
    p = select_parameters(pure_jump, "dirichlet", eps=0.01, M=1.1, lam=10.0)
    bound = 25 * (1 - 2 * 0.01 * 1.1) ** 2
    assert bound == pytest.approx(23.91, abs=5e-3)
    assert p.mu == pytest.approx(1.1 * bound, rel=1e-12)
    assert p.mu == pytest.approx(26.3, abs=5e-3)


def test_M_must_exceed_tangential_slopes(circle):
    with pytest.raises(ValueError, match="exceed"):
        select_parameters(circle, "dirichlet", M=0.9)


# -- w, sigma, beta -------------------------------------------------------------


def test_pure_jump_w_and_sigma(pure_jump_field):
    f = pure_jump_field
    z = 0 * XI
    np.testing.assert_allclose(f.ws.w.value(XI, z), 0.0, atol=1e-14)
    np.testing.assert_allclose(f.ws.sigma(XI, z), f.params.A / f.params.n(XI), rtol=1e-13)
    b1, b2 = f.beta.values(XI, z)
    np.testing.assert_allclose(b1, b2, atol=1e-14)
    # off the curve omega_1 - omega_2 = M^2 (eps^2/v_1^2 - eps^2/v_2^2) ~ -4 M^3 eta / eps, and the
    # eta-drift at eta = 0 is lambda A, so beta_2 - beta_1 ~ -2 M^3 eta^2 / (eps lambda A)
    p = f.params
    lead = -2 * p.M**3 / (p.eps * p.lam * p.A)
    for eta in (1e-3, -1e-3):
        b1, b2 = f.beta.values(XI[20:-20], eta + 0 * XI[20:-20])
        np.testing.assert_allclose((b2 - b1) / eta**2, lead, rtol=2e-2)


def test_flux_is_divergence_free(circle_field):
    f = circle_field
    xi, eta = np.meshgrid(np.linspace(0.1, 0.9, 9), np.linspace(-0.8, 0.8, 5) * f.halfwidth)
    h = 1e-2 * f.halfwidth

    def comp(a, b, j):
        return f.ws.flux(a, b)[j]

    def d(j, a, b, axis):
        s = (h, 0) if axis == 0 else (0, h)
        return (8 * (comp(a + s[0], b + s[1], j) - comp(a - s[0], b - s[1], j))
                - (comp(a + 2 * s[0], b + 2 * s[1], j) - comp(a - 2 * s[0], b - 2 * s[1], j))) / (12 * h)

    assert np.max(np.abs(d(0, xi, eta, 0) + d(1, xi, eta, 1))) <= 1e-6


def test_sigma_times_tangential_w(circle_field, circle):
    f = circle_field
    z = 0 * XI
    t = circle.traces(XI)
    lhs = f.ws.sigma(XI, z) * f.ws.w.grad(XI, z)[0]
    np.testing.assert_allclose(lhs, -2 * f.params.eps * (t["dxi1"] + t["dxi2"]), atol=1e-8)


def test_beta_identities_on_curved_fixture(circle_field, circle):
    f = circle_field
    z = 0 * XI
    t = circle.traces(XI)
    b1, b2 = f.beta.values(XI, z)
    np.testing.assert_allclose(b1, 0.5 * (t["u1"] + t["u2"]), atol=1e-13)
    np.testing.assert_allclose(b2, 0.5 * (t["u1"] + t["u2"]), atol=1e-13)
    (_, d1), (_, d2) = f.beta.gradients(XI, z)
    lhs = f.params.lam * (d2 - d1) * f.ws.sigma(XI, z) * f.ws.w.grad(XI, z)[1]
    np.testing.assert_allclose(lhs, circle.chart.curvature(XI), atol=1e-6)


@pytest.mark.parametrize("name", ["pure_jump_field", "circle_field"])
def test_region_ordering_at_curve(name, request):
    f = request.getfixturevalue(name)
    loc = f.local(XI, 0 * XI)
    b = f.bounds(loc)
    eps, lam = f.params.eps, f.params.lam
    # u1 - eps < u1 + eps < beta_1 = beta_2 < beta_2 + 1/lam < u2 - eps < u2 + eps
    assert np.all(np.diff(b, axis=1) > 0)
    assert np.all(loc["u1"] + eps < loc["b1"]) and np.all(loc["b2"] + 1 / lam < loc["u2"] - eps)
    np.testing.assert_allclose(loc["b1"], loc["b2"], atol=1e-13)


def test_manifest_is_json(circle_field):
    m = circle_field.manifest()
    back = json.loads(json.dumps(m))
    assert back["regions"] == ["A1", "A2", "A3", "A4", "A5", "A6", "A7"]
    assert back["params"]["variant"] == "dirichlet"


# -- graph variant and extension ------------------------------------------------


@pytest.fixture(scope="module")
def graph_line():
    return load_fixture("graph_line")


def test_graph_variant_on_thin_domain_passes(graph_line):
    cand, spec = graph_line
    K = rectangle_K(1.0, spec.outer_height)
    p = select_parameters(cand, "graph", capacity=K)
    lo, hi = p.window
    assert lo < p.M < hi
    fld = assemble_field(cand, p)
    fld.extension = build_extension_field(cand, fld.params, outer_height=spec.outer_height)
    rep = verify_field(fld, cand, grid=(16, 16), st_samples=24)
    assert rep.passed, rep.as_dict()["conditions"]


def test_graph_variant_M_above_window(graph_line):
    cand, spec = graph_line
    K = rectangle_K(1.0, spec.outer_height)
    with pytest.raises(GraphWindowError, match="domain too large"):
        select_parameters(cand, "graph", capacity=K, M=2 * K)


def test_graph_window_empty_on_large_domain(graph_line):
    cand, _ = graph_line
    lo, hi = graph_window(cand, rectangle_K(1.0, 10.0))
    assert lo == pytest.approx(78 * 2 * (2 * 0.01**2))  # c (1 + l^2) sum ||d_tau u_i||^2, both slopes 0.01
    # a capacity below the lower end empties the window
    with pytest.raises(GraphWindowError, match="domain too large"):
        select_parameters(cand, "graph", capacity=0.5 * lo)


def test_extension_potential_properties(graph_line):
    cand, spec = graph_line
    p = select_parameters(cand, "graph", capacity=rectangle_K(1.0, spec.outer_height))
    ext = build_extension_field(cand, p, outer_height=spec.outer_height)
    assert ext.v.min() >= 1.0 - 1e-12
    assert ext.eqnorm_mismatch <= 1e-4
    assert ext.alpha == pytest.approx(p.M / (1 - p.M * p.halfwidth))


def test_extension_coercivity_violation(graph_line):
    cand, spec = graph_line
    p = select_parameters(cand, "graph", capacity=rectangle_K(1.0, spec.outer_height))
    with pytest.raises(ExtensionError, match="coercivity"):
        build_extension_field(cand, p, outer_height=spec.outer_height, capacity=0.5 * p.M)


def test_extension_rejects_dirichlet_params(pure_jump):
    with pytest.raises(ValueError, match="graph"):
        build_extension_field(pure_jump, select_parameters(pure_jump), outer_height=0.1)


# -- outer loop -----------------------------------------------------------------


def test_calibrate_floor_names_worst_condition(pure_jump):
    with pytest.raises(BuildError) as info:
        calibrate(pure_jump, grid=(6, 6), st_samples=8, eps_floor=0.05, max_strip_halvings=0,
                  verify_kwargs={"tolerances": {"a_interior": 1e-30}})
    assert info.value.worst == "a_interior"
    assert [h["eps"] for h in info.value.history] == pytest.approx([0.2, 0.1, 0.05])


def test_calibrate_pure_jump_first_try(pure_jump):
    res = calibrate(pure_jump, grid=(8, 8), st_samples=16)
    assert res.report.passed and len(res.history) == 1
