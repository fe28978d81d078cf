"""
Gagliardo seminorms and the pointwise operator
==============================================

The seminorm of a fixed function grows with the order, and pairing the
pointwise operator of a smooth bump with a discrete function reproduces the
energy form as the mesh is refined.
"""

import numpy as np

from fraclap import KernelSpec, assemble, energy, generate_interval, interpolate, pv_apply, seminorm
from fraclap.functions import get
from fraclap.quadrature import gauss_legendre01

mesh = generate_interval(32)
u = interpolate(mesh, lambda p: np.sin(2 * np.pi * p[..., 0]))
for t in (0.1, 0.3, 0.5, 0.7, 0.9):
    print(f"t={t:.1f}  |u|_H^t = {seminorm(u, t):.6f}")

# int u_h (-Delta)^s phi dx versus E_s(u_h, phi_h)
s = 0.3
x, w = gauss_legendre01(4)
for n in (8, 16, 32, 64):
    mesh = generate_interval(n)
    phi = get("bump", mesh)
    uh = interpolate(mesh, lambda p: p[..., 0] ** 2)
    pairing = 0.0
    for a, b in mesh.vertices[mesh.elements][:, :, 0]:
        for xi, wi in zip(a + (b - a) * x, (b - a) * w):
            pairing += wi * uh(np.array([xi]))[0] * pv_apply(phi, np.array([xi]), s, mesh)
    E = energy(uh, interpolate(mesh, phi), assemble(mesh, KernelSpec(1, s)))
    print(f"n={n:3d}  pairing={pairing:.8f}  energy={E:.8f}  rel diff={abs(pairing - E) / abs(E):.1e}")
