"""Convergence of the interior-penalty DG solver on a manufactured solution.

Solves -Laplace(u) = f with u = sin(pi x) sin(pi y) on a sequence of grids
and prints the L2 and broken-H1 errors with their observed orders, for both
the symmetric (SIPG) and non-symmetric (NIPG) variants.
"""

import dgnet.dg as dg
import dgnet.symbolic as symbolic
from dgnet.mesh import build_mesh

u = symbolic.parse_expr("sin(pi*x)*sin(pi*y)")
f = symbolic.negate(symbolic.laplacian(u))
sigma = 1.0
levels = [8, 16, 32, 64]

for eps, name in ((-1, "SIPG"), (1, "NIPG")):
    print(f"{name}, sigma = {sigma}")
    print(f"  {'N':>4} {'L2 error':>12} {'rate':>6} {'H1 error':>12} {'rate':>6}")
    prev = None
    for n in levels:
        ops = dg.assemble(build_mesh(n), dg.DgConfig(eps, sigma, n), f)
        sol = dg.solve_dg(ops)
        l2 = dg.error_norm(u, sol, "L2")
        h1 = dg.error_norm(u, sol, "brokenH1")
        if prev is None:
            print(f"  {n:>4} {l2:>12.4e} {'-':>6} {h1:>12.4e} {'-':>6}")
        else:
            rl2 = dg.convergence_rate(prev[0], l2)
            rh1 = dg.convergence_rate(prev[1], h1)
            print(f"  {n:>4} {l2:>12.4e} {rl2:>6.2f} {h1:>12.4e} {rh1:>6.2f}")
        prev = (l2, h1)
    print()
