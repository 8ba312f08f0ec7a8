"""Fit a single Poisson problem with the unsupervised loss.

No labelled solution enters the training signal: the network drives the
element mass errors to zero while the jump penalty keeps the prediction
from drifting into the discontinuous null space.  600 steps keep the demo
under a minute; the full-length desk run uses 5000.
"""

import numpy as np

import dgnet.dg as dg
import dgnet.nn as nn
import dgnet.symbolic as symbolic
import dgnet.train as train
from dgnet.mesh import DofLayout, build_mesh, vector_to_image

n = 16
steps = 600

u = symbolic.parse_expr("sin(pi*x)*sin(pi*y)")
f = symbolic.negate(symbolic.laplacian(u))
mesh = build_mesh(n)
ops = dg.assemble(mesh, dg.DgConfig(-1, 1.0, n), f)

cfg = train.UnsupervisedConfig(eta=2.0, steps=steps, seed=0)
img = vector_to_image(ops.proj_coeffs, DofLayout(n))
alpha, history = train.train_unsupervised(img, ops, cfg,
                                          nn.UNetConfig(input_side=2 * n))

print(f"N = {n}, eta = {cfg.eta}, {steps} steps")
best = np.inf
for k in (0, 9, 49, 99, 199, 399, steps - 1):
    best = min(best, min(history[:k + 1]))
    print(f"  step {k + 1:>4}: loss {history[k]:.4e}   best so far {best:.4e}")

sol = dg.DgFunction(alpha, mesh)
dg_sol = dg.solve_dg(ops)
print()
print(f"L2(u, prediction)    {dg.error_norm(u, sol, 'L2'):.4e}")
print(f"L2(u, DG solution)   {dg.error_norm(u, dg_sol, 'L2'):.4e}")
print(f"H1(u, prediction)    {dg.error_norm(u, sol, 'brokenH1'):.4e}")
print(f"H1(u, DG solution)   {dg.error_norm(u, dg_sol, 'brokenH1'):.4e}")
