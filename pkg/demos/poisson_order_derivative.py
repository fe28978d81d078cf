"""
Poisson problem and its derivative in the order s
=================================================

Solve the zero-mean problem (-Delta)^s_Omega u = f on the unit interval for a
few orders, then compare the order derivative w_s with forward difference
quotients (u_{s+sigma} - u_s) / sigma.
"""

import numpy as np

from fraclap import KernelSpec, assemble, generate_interval, interpolate, mass, poisson_solve, s_derivative_solve

mesh = generate_interval(64)
M = mass(mesh)
f = interpolate(mesh, lambda p: np.cos(np.pi * p[..., 0]))


def l2(v):
    return float(np.sqrt(v @ M.mat @ v))


# the solution flattens as s grows: larger orders penalise oscillation more
for s in (0.2, 0.4, 0.6, 0.8):
    u = poisson_solve(mesh, s, f, assemble(mesh, KernelSpec(1, s)), M)
    print(f"s={s:.1f}  ||u||={l2(u.coeffs):.6f}  u(0)={u.coeffs[0]:+.6f}")

# derivative at s = 0.4 against difference quotients
s = 0.4
A = assemble(mesh, KernelSpec(1, s))
L = assemble(mesh, KernelSpec(1, s, "log"))
u = poisson_solve(mesh, s, f, A, M)
w = s_derivative_solve(mesh, s, f, u, A, L, M).w_s
print(f"\n||w_s|| = {l2(w.coeffs):.6f}")
prev = None
for sigma in (1e-1, 1e-2, 1e-3, 1e-4):
    u2 = poisson_solve(mesh, s + sigma, f, assemble(mesh, KernelSpec(1, s + sigma)), M)
    err = l2((u2.coeffs - u.coeffs) / sigma - w.coeffs)
    ratio = "" if prev is None else f"  ratio {prev / err:.2f}"
    print(f"sigma={sigma:.0e}  ||v_sigma - w_s|| = {err:.3e}{ratio}")
    prev = err
