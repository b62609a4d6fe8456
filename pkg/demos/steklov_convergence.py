"""Mesh convergence of K on three rectangles, against the closed form.

Run with ``python3 demos/steklov_convergence.py``.
"""

from calibra import RectangleDomain, compute_K, rectangle_K

for a, b in [(1.0, 1.0), (2.0, 1.0), (1.0, 0.5)]:
    exact = rectangle_K(a, b)
    print(f"rectangle {a:g} x {b:g}, closed form {exact:.6f}")
    for n in (8, 16, 32, 64):
        r = compute_K(RectangleDomain(a, b), 1.0 / n)
        print(f"  h=1/{n:<3d} K={r.K:.6f} rel={abs(r.K - exact) / exact:.2e}  "
              f"extrapolated={r.K_richardson:.6f} rel={abs(r.K_richardson - exact) / exact:.2e}")
