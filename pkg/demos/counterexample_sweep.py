"""Energy gain along the perturbation family for several crack lengths ``l = r c``."""

from calibra import find_energy_decrease, solve_w0

w = solve_w0()
print(f"c = {w.c:.6f}  (finest mesh {w.c_fine:.6f}, observed order {w.order:.2f})")
for ratio in (0.5, 1.0, 1.5, 2.0, 4.0):
    res = find_energy_decrease(ratio * w.c, w)
    best = "-" if res.best is None else f"eps={res.best.eps:g} gain={res.best.delta_E:.3e}"
    print(f"l/c={ratio:<4g} {res.verdict:<15} slope {res.slope:+.5f} (1/c-1/l = {res.slope_expected:+.5f})  {best}")
