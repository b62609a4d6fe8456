"""Numerical certificates for Mumford-Shah critical points.

The package builds and checks calibration fields for jump candidates whose
discontinuity set is a regular analytic arc, computes the mixed
Steklov-Dirichlet constant that governs the sufficient condition for
graph-minimality, and reproduces the rectangle counterexample.
"""

from .calibration_builder import (
    BuildError,
    CalibrationField,
    CalibrationParams,
    assemble_field,
    build_extension_field,
    calibrate,
    select_parameters,
    solve_riccati_n,
)
from .calibration_verify import VerificationReport, derivative_identities, verify_field
from .counterexample import find_energy_decrease, perturbed_energy, solve_w0
from .curve_geometry import AnalyticCurve, CurveChart, build_chart, closed_form_curve, series_curve
from .euler_check import Candidate, check_euler
from .fixtures import load_fixture
from .steklov_capacity import (
    RectangleDomain,
    blowup_study,
    compute_K,
    rectangle_K,
    sufficient_condition,
    thin_domain_h,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticCurve", "CurveChart", "build_chart", "closed_form_curve", "series_curve",
    "Candidate", "check_euler", "load_fixture",
    "BuildError", "CalibrationField", "CalibrationParams", "assemble_field", "build_extension_field",
    "calibrate", "select_parameters", "solve_riccati_n",
    "VerificationReport", "derivative_identities", "verify_field",
    "RectangleDomain", "blowup_study", "compute_K", "rectangle_K", "sufficient_condition", "thin_domain_h",
    "find_energy_decrease", "perturbed_energy", "solve_w0",
]
