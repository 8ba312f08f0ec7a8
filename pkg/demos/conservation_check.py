"""Element-wise mass conservation of the DG solution.

The mass-error operator (B, c) contracts the DG system with the indicator
function of each element: B alpha - c vanishes exactly when alpha solves
the system, and not for other nearby functions.  This script prints the
worst element mass error for the DG solution and, for contrast, for the
element-wise L2 projection of the exact solution, which is a closer
function in L2 but conserves nothing.
"""

import numpy as np

import dgnet.dg as dg
import dgnet.symbolic as symbolic
from dgnet.mesh import build_mesh

u = symbolic.parse_expr("sin(pi*x)*sin(pi*y)")
f = symbolic.negate(symbolic.laplacian(u))
n = 32

mesh = build_mesh(n)
ops = dg.assemble(mesh, dg.DgConfig(-1, 1.0, n), f)
sol = dg.solve_dg(ops)

_, proj_u = dg.source_terms(mesh, u)
scale = np.max(np.abs(ops.load))

print(f"N = {n}, SIPG, sigma = 1")
print(f"  ||load||_inf                      {scale:.4e}")
print(f"  max mass error, DG solution       {np.max(np.abs(dg.mass_error(ops, sol.coeffs))):.4e}")
print(f"  max mass error, projection of u   {np.max(np.abs(dg.mass_error(ops, proj_u))):.4e}")
print()
print("the projection is the better L2 approximation of u:")
print(f"  L2(u, DG solution)   {dg.error_norm(u, sol, 'L2'):.4e}")
print(f"  L2(u, projection)    {dg.error_norm(u, dg.DgFunction(proj_u, mesh), 'L2'):.4e}")
print("but only the DG solution balances the local fluxes.")
