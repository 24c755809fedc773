"""The sheared affine torus, where the flow runs off to infinity.

The domain is the unit square with deck action
``(x, y) -> (x + n y + m + n^2/2, y + n)`` and the invariant metric
``[[1, -y], [-y, y^2 + 1]]``.  The equivariant lift ``x - y^2/2`` into the
circle has constant affine Laplacian -1, so the flow translates it rigidly:
the kinetic energy stays at 1 and the distance from the start grows like t.

Run with ``python3 demos/03_counterexample.py`` (about 10 s on a 32^2 grid).
"""

import numpy as np

from affine_harmonic.scenarios import build, builtin_counterexample, run_scenario

cfg = builtin_counterexample(n=32, t_end=5.0)
grid, f0, chart, flow = build(cfg)
print(f"grid {grid.shape}, dt = {flow.dt:.3e}, deck action {grid.action.name}")

x, y = grid.coords[..., 0], grid.coords[..., 1]


def show(t, f):
    err = np.abs(f.values[..., 0] - (x - 0.5 * y**2 - t)).max()
    print(f"t = {t:6.3f}  |f - (x - y^2/2 - t)| = {err:.1e}")


report, f, trace = run_scenario(cfg.with_flow(monitor_every=400), callback=show)
print(trace.column("sup_kinetic")[-3:], "<- kinetic energy stays at 1")
print("outcome:", report.outcome.value, "(expected", report.expected_outcome.value + ")")
