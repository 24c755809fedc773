"""Target charts: flat tori and the hyperbolic half-plane.

Shows Christoffel symbols, distances and the finite-difference curvature
check used to certify the built-in charts.

Run with ``python3 demos/02_target_charts.py``.
"""

import numpy as np

from affine_harmonic.targets import chart_from_name, curvature_check_fd

torus = chart_from_name("flat_torus(1, 2)")
half_plane = chart_from_name("hyperbolic_half_plane")

print(torus.name, "monodromy:", torus.monodromy)
print("torus curvature:", curvature_check_fd(torus, [0.1, 0.2], ([1, 0], [0, 1])))

y = np.array([0.0, 2.0])
G = half_plane.christoffels(y)
print("half-plane Gamma^v_uu at v = 2:", G[1, 0, 0])
print("half-plane curvature:", curvature_check_fd(half_plane, y, ([1, 0.3], [0.2, 1])))

# Vertical segments are geodesics of length log(v2 / v1).
print("d((0,1), (0,e)) =", half_plane.distance([0, 1], [0, np.e]))
