"""Build and verify the calibration for the circle-arc fixture on a coarse grid, then print the margins."""

from calibra import calibrate, derivative_identities, load_fixture

cand, _ = load_fixture("circle_arc")
res = calibrate(cand, "dirichlet", grid=(24, 24), st_samples=24)
p = res.field.params
print(f"eps={p.eps:g} lambda={p.lam:.4g} mu={p.mu:.4g} halfwidth={p.halfwidth:.4g}")
for name, m in sorted(res.report.margins().items()):
    print(f"  {name:<12} margin {m:.3e}")
print("identity errors:", {k: f"{v:.1e}" for k, v in derivative_identities(res.field).errors().items()})
