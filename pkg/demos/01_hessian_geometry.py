"""Hessian geometry of a convex potential.

Walks through the metric, the family of s-connections, the duality between
the s and -s connections, and the Legendre dual chart for ``log_sum_exp``.

Run with ``python3 demos/01_hessian_geometry.py``.
"""

import numpy as np

from affine_harmonic import hessian_geometry as hg

F = hg.log_sum_exp(2)
x = np.array([0.3, -0.5])

# The metric is the Hessian of F; it is positive definite because F is strictly convex.
gamma = hg.metric_from_potential(F, x, validate=True)
print("metric at x:\n", gamma)

# s = 1 gives the flat connection of the affine coordinates; s = 0 is Levi-Civita.
for s in (1.0, 0.0, -1.0):
    G = hg.s_connection(F, x, s).coeffs
    print(f"s = {s:+.0f}: max |Gamma_(abd)| = {np.abs(G).max():.4f}")

# The s and -s connections are dual with respect to the metric.
rng = np.random.default_rng(0)
V, W, Z = rng.normal(size=(3, 2))
print("duality residual for s = 0.4:", hg.duality_residual(F, x, 0.4, V, W, Z))

# The dual coordinates are the gradient; the dual potential is the convex conjugate.
xi = hg.to_dual_coordinates(F, x)
dual = hg.legendre_dual(F, xi)
print("xi =", xi, " recovered x =", dual.x, " Newton iterations:", dual.iterations)
print("F(x) + Phi(xi) - x.xi =", F.eval(dual.x) + dual.phi - dual.x @ xi)

# In dual coordinates the metric is the inverse matrix.
print("dual metric @ metric =\n", hg.dual_metric(F, x) @ gamma)
