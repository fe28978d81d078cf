"""
Right derivative of the first eigenvalue
========================================

On the interval the first nontrivial eigenvalue is simple and the forward
quotients converge to the right derivative.  On the union-jack square it is
double, and the quotients only bound the derivative from above.
"""

import numpy as np

from fraclap import KernelSpec, assemble, dlambda_plus, eig, generate_interval, generate_square, mass


def forward_quotients(mesh, s, sigmas):
    M = mass(mesh)
    A = assemble(mesh, KernelSpec(mesh.dim, s))
    L = assemble(mesh, KernelSpec(mesh.dim, s, "log"))
    rep = dlambda_plus(mesh, s, A, L, M)
    print(f"{mesh.dim}D mesh, s={s}: lambda_1={rep.lambda1:.8f} multiplicity={rep.multiplicity} "
          f"dlambda_plus={rep.dplus_lambda:.8f}")
    for sigma in sigmas:
        lam = eig(mesh, s + sigma, 1, assemble(mesh, KernelSpec(mesh.dim, s + sigma)), M).eigenvalues[0]
        q = (lam - rep.lambda1) / sigma
        print(f"  sigma={sigma:.0e} quotient={q:.8f} quotient - dlambda_plus={q - rep.dplus_lambda:+.3e}")


forward_quotients(generate_interval(64), 0.4, [1e-1, 1e-2, 1e-3, 1e-4])
forward_quotients(generate_square(4), 0.4, [1e-1, 1e-2, 1e-3])

# lambda_1 as a function of s on the interval
mesh = generate_interval(32)
M = mass(mesh)
grid = np.linspace(0.1, 0.9, 9)
lam = [eig(mesh, s, 1, assemble(mesh, KernelSpec(1, s)), M).eigenvalues[0] for s in grid]
print("\n s    lambda_1")
for s, v in zip(grid, lam):
    print(f"{s:.1f}  {v:.6f}")
