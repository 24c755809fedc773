"""Hessian geometry and the affine harmonic map heat flow.

Submodules:

- :mod:`~affine_harmonic.hessian_geometry` -- metrics, s-connections and Legendre duality of convex potentials
- :mod:`~affine_harmonic.targets` -- target charts (Euclidean, flat tori, hyperbolic half-plane)
- :mod:`~affine_harmonic.flow` -- finite-difference tension field and parabolic flow with monitors
- :mod:`~affine_harmonic.scenarios` -- config files, built-in experiments, result files
- :mod:`~affine_harmonic.cli` -- ``affine-flow`` command
"""

from .errors import (
    AffineHarmonicError,
    CFLViolation,
    ChartExit,
    ConfigError,
    DegeneratePlane,
    DomainViolation,
    MonodromyMismatch,
    NewtonDiverged,
    NotPositiveDefinite,
    ShapeMismatch,
)
from .flow import (
    Boundary,
    DomainGrid,
    FlowConfig,
    FlowTrace,
    MapField,
    Outcome,
    Scheme,
    affine_laplacian,
    flow_step,
    monitor_eta,
    monitor_homotopy_distance,
    monitor_kinetic,
    run_flow,
    tension_field,
)
from .hessian_geometry import (
    PotentialFunction,
    dual_metric,
    duality_residual,
    legendre_dual,
    log_sum_exp,
    metric_from_potential,
    potential_from_name,
    quadratic,
    s_connection,
    sum_exp,
    to_dual_coordinates,
)
from .targets import (
    chart_from_name,
    curvature_check_fd,
    lift_delta,
    make_euclidean,
    make_flat_torus,
    make_hyperbolic_half_plane,
)

__version__ = "0.1.0"
