import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibra.curve_geometry import arc_length_reparameterize, build_chart, closed_form_curve
from calibra.euler_check import candidate_from_cartesian, candidate_from_chart, check_euler
from calibra.fixtures import load_fixture


def _line_chart():
    return build_chart(arc_length_reparameterize(closed_form_curve("t", "0", (0, 1))))


def test_plus_minus_x_satisfies_euler():
    cand = candidate_from_cartesian(_line_chart(), "-z", "z")  # u = x above, -x below
    rep = check_euler(cand)
    # the traces -x < x fail on part of the segment, but the three residuals vanish
    assert rep.laplacian <= 1e-8 and rep.normal_derivative == 0 and rep.curvature_jump == 0


def test_annular_fixture_residuals(circle):
    rep = check_euler(circle)
    assert rep.passed
    assert rep.curvature_jump <= 1e-12
    assert rep.normal_derivative <= 1e-12


def test_polar_oracle_for_annular_candidate(circle):
    # u2 = sqrt(R) theta: tangential derivative on the unit circle is sqrt(R)/R = 1 in magnitude
    t = circle.traces(np.linspace(0, 1, 9))
    np.testing.assert_allclose(np.abs(t["dxi2"]), 1.0, atol=1e-12)
    np.testing.assert_allclose(t["dxi1"], 0.0, atol=0)
    np.testing.assert_allclose(t["dxi2"] ** 2 - t["dxi1"] ** 2,
                               circle.chart.curvature(np.linspace(0, 1, 9)), atol=1e-12)


def test_x_above_two_x_below_fails_with_residual_three():
    cand = candidate_from_cartesian(_line_chart(), "2*z + 10", "z + 20")
    rep = check_euler(cand)
    assert not rep.passed
    assert rep.curvature_jump == pytest.approx(3.0, abs=1e-12)


def test_equal_traces_fail_standing_hypothesis():
    rep = check_euler(candidate_from_chart(_line_chart(), "1", "1"))
    assert rep.min_gap == 0 and not rep.passed


@settings(max_examples=10, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 2 * np.pi), st.floats(-3, 3), st.floats(-3, 3))
def test_residuals_invariant_under_shift_and_rigid_motion(c, angle, sx, sy):
    R = 1.0
    base = closed_form_curve("R*cos(1/2 - t/R)", "R*sin(1/2 - t/R)", (0, 1), constants={"R": R})
    moved = build_chart(arc_length_reparameterize(base.moved(angle, sx + 1j * sy)))
    rot = complex(np.exp(1j * angle))
    shift = sx + 1j * sy
    # potentials pulled back through the inverse motion, then shifted by c
    inv = f"((z - ({shift.real!r} + I*({shift.imag!r})))*({rot.conjugate().real!r} + I*({rot.conjugate().imag!r})))"
    cand = candidate_from_cartesian(moved, f"1 + {c!r}", f"-I*log({inv}) + 3 + {c!r}")
    ref = check_euler(load_fixture("circle_arc")[0])
    rep = check_euler(cand)
    for k in ("laplacian", "normal_derivative", "curvature_jump"):
        assert abs(getattr(rep, k) - getattr(ref, k)) <= 1e-10


def test_normalization_sets_min_trace_to_one(circle):
    shifted = circle.normalized()
    t = shifted.traces(shifted.sample_xi())
    assert np.min(t["u1"]) == pytest.approx(1.0, abs=1e-14)
    moved = candidate_from_cartesian(circle.chart, "-4", "-I*log(z) - 2").normalized()
    assert np.min(moved.traces(moved.sample_xi())["u1"]) == pytest.approx(1.0, abs=1e-13)
    assert check_euler(moved).passed
