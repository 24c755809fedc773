"""Target Riemannian charts for the nonlinear term of the flow.

Every chart is a single coordinate patch on the universal cover of the
target.  Maps into a quotient (a flat torus, the circle) are stored as lifts
to this cover; ``monodromy`` lists the deck translations generating the
quotient.

Metric and Christoffel queries are vectorized: a point array of shape
``(..., n)`` yields ``(..., n, n)`` and ``(..., n, n, n)`` arrays, with
``christoffels(y)[..., i, j, k] = Gamma^i_{jk}``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegeneratePlane, DomainViolation

__all__ = [
    "CurvatureSign",
    "TargetChart",
    "EuclideanChart",
    "FlatTorusChart",
    "HyperbolicHalfPlane",
    "make_euclidean",
    "make_flat_torus",
    "make_hyperbolic_half_plane",
    "chart_from_name",
    "CHART_CATALOG",
    "curvature_check_fd",
    "lift_delta",
]

HALF_PLANE_FLOOR = 1e-12


class CurvatureSign(enum.Enum):
    FLAT = "Flat"
    NONPOSITIVE = "Nonpositive"
    NEGATIVE = "Negative"


@dataclass(frozen=True)
class TargetChart:
    """Base class for target charts.  Subclasses supply the geometry."""

    dim: int
    name: str
    monodromy: tuple = ()
    curvature_sign: CurvatureSign = CurvatureSign.FLAT

    @property
    def is_flat(self) -> bool:
        return self.curvature_sign is CurvatureSign.FLAT

    def validate(self, y) -> np.ndarray:
        """Return ``y`` as a float array, raising if any point is outside the chart."""
        return np.asarray(y, dtype=float)

    def invalid_mask(self, y) -> np.ndarray:
        """Boolean mask over the leading axes of ``y`` marking invalid points."""
        y = np.asarray(y, dtype=float)
        return ~np.all(np.isfinite(y), axis=-1)

    def metric(self, y) -> np.ndarray:
        raise NotImplementedError

    def christoffels(self, y) -> np.ndarray:
        raise NotImplementedError

    def distance(self, a, b) -> np.ndarray:
        raise NotImplementedError

    def is_isometric_translation(self, shift) -> bool:
        """Whether ``y -> y + shift`` is an isometry of the cover chart."""
        return True


@dataclass(frozen=True)
class EuclideanChart(TargetChart):
    def metric(self, y):
        y = self.validate(y)
        return np.broadcast_to(np.eye(self.dim), y.shape[:-1] + (self.dim, self.dim)).copy()

    def christoffels(self, y):
        y = self.validate(y)
        return np.zeros(y.shape[:-1] + (self.dim,) * 3)

    def distance(self, a, b):
        a, b = self.validate(a), self.validate(b)
        return np.linalg.norm(a - b, axis=-1)


@dataclass(frozen=True)
class FlatTorusChart(EuclideanChart):
    """Euclidean cover of ``R^n / (periods Z^n)``.  Distances are between lifts."""

    periods: tuple = field(default=())


@dataclass(frozen=True)
class HyperbolicHalfPlane(TargetChart):
    """Upper half-plane ``{(u, v): v > 0}`` with metric ``(du^2 + dv^2) / v^2``."""

    def invalid_mask(self, y):
        y = np.asarray(y, dtype=float)
        return ~(np.all(np.isfinite(y), axis=-1) & (y[..., 1] > HALF_PLANE_FLOOR))

    def validate(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != 2:
            raise DomainViolation(f"half-plane points have 2 coordinates, got shape {y.shape}")
        bad = self.invalid_mask(y)
        if np.any(bad):
            first = np.argwhere(bad)[0]
            raise DomainViolation(f"half-plane point {y[tuple(first)]} at index {tuple(first)} has v <= {HALF_PLANE_FLOOR}")
        return y

    def metric(self, y):
        y = self.validate(y)
        w = 1.0 / y[..., 1] ** 2
        out = np.zeros(y.shape[:-1] + (2, 2))
        out[..., 0, 0] = w
        out[..., 1, 1] = w
        return out

    def christoffels(self, y):
        y = self.validate(y)
        inv_v = 1.0 / y[..., 1]
        out = np.zeros(y.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 1] = -inv_v
        out[..., 0, 1, 0] = -inv_v
        out[..., 1, 0, 0] = inv_v
        out[..., 1, 1, 1] = -inv_v
        return out

    def distance(self, a, b):
        a, b = self.validate(a), self.validate(b)
        sq = np.sum((a - b) ** 2, axis=-1)
        arg = 1.0 + sq / (2.0 * a[..., 1] * b[..., 1])
        return np.arccosh(np.maximum(arg, 1.0))

    def is_isometric_translation(self, shift):
        shift = np.asarray(shift, dtype=float)
        return shift.shape == (2,) and shift[1] == 0.0


def make_euclidean(n: int) -> EuclideanChart:
    """Flat ``R^n``; no monodromy."""
    n = int(n)
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    return EuclideanChart(dim=n, name=f"euclidean({n})")


def make_flat_torus(periods: Sequence[float]) -> FlatTorusChart:
    """Flat torus with the given periods; its monodromy are the coordinate translations."""
    periods = tuple(float(p) for p in np.atleast_1d(periods))
    if not periods or any(not p > 0 for p in periods):
        raise ValueError(f"periods must be positive, got {periods}")
    n = len(periods)
    mono = tuple(tuple(float(p) if i == j else 0.0 for j in range(n)) for i, p in enumerate(periods))
    name = "circle" if periods == (1.0,) else "flat_torus(" + ",".join(repr(p) for p in periods) + ")"
    return FlatTorusChart(dim=n, name=name, monodromy=mono, periods=periods)


def make_hyperbolic_half_plane() -> HyperbolicHalfPlane:
    """Upper half-plane model of the hyperbolic plane (curvature -1)."""
    return HyperbolicHalfPlane(dim=2, name="hyperbolic_half_plane", curvature_sign=CurvatureSign.NEGATIVE)


CHART_CATALOG = ("euclidean(n)", "flat_torus(periods)", "circle", "hyperbolic_half_plane")

_NAME_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def chart_from_name(spec: str) -> TargetChart:
    """Resolve a catalog name such as ``euclidean(2)``, ``flat_torus(1 2)`` or ``circle``."""
    m = _NAME_RE.match(spec)
    if m is None:
        raise ValueError(f"cannot parse chart name {spec!r}")
    kind, args = m.group(1), (m.group(2) or "").replace(",", " ").split()
    if kind == "euclidean":
        if len(args) != 1:
            raise ValueError("euclidean(n) takes one integer")
        return make_euclidean(int(args[0]))
    if kind == "flat_torus":
        if not args:
            raise ValueError("flat_torus(periods) needs at least one period")
        return make_flat_torus([float(a) for a in args])
    if kind == "circle" and not args:
        return make_flat_torus([1.0])
    if kind == "hyperbolic_half_plane" and not args:
        return make_hyperbolic_half_plane()
    raise ValueError(f"unknown chart {spec!r}; known: {', '.join(CHART_CATALOG)}")


def _riemann_tensor_fd(chart: TargetChart, y: np.ndarray, step: float) -> np.ndarray:
    """``R^i_{jkl}`` at ``y`` from central differences of the Christoffels.

    Convention: ``R(d_k, d_l) d_j = R^i_{jkl} d_i``.
    """
    n = chart.dim
    G = chart.christoffels(y)
    dG = np.empty((n,) + G.shape)  # dG[m, i, j, k] = d_m Gamma^i_{jk}
    for m in range(n):
        e = np.zeros(n)
        e[m] = step
        dG[m] = (chart.christoffels(y + e) - chart.christoffels(y - e)) / (2 * step)
    R = (
        np.einsum("kilj->ijkl", dG)
        - np.einsum("likj->ijkl", dG)
        + np.einsum("ikp,plj->ijkl", G, G)
        - np.einsum("ilp,pkj->ijkl", G, G)
    )
    return R


def curvature_check_fd(chart: TargetChart, y, plane) -> float:
    """Sectional curvature of ``plane = (X, Y)`` at ``y``, from finite differences.

    Test utility for certifying built-in charts; step ``1e-4 (1 + |y|)``.
    """
    y = chart.validate(np.asarray(y, dtype=float))
    X, Y = (np.asarray(v, dtype=float) for v in plane)
    g = chart.metric(y)
    area2 = (X @ g @ X) * (Y @ g @ Y) - (X @ g @ Y) ** 2
    scale = (X @ g @ X) * (Y @ g @ Y)
    if not scale > 0 or area2 <= 1e-12 * scale:
        raise DegeneratePlane("tangent vectors are (nearly) linearly dependent")
    step = 1e-4 * (1.0 + np.linalg.norm(y))
    R = _riemann_tensor_fd(chart, y, step)
    # <R(X, Y) Y, X>
    RXYY = np.einsum("ijkl,j,k,l->i", R, Y, X, Y)
    return float(X @ g @ RXYY / area2)


def lift_delta(chart: TargetChart, a_lift, b_lift) -> np.ndarray:
    """Cover distance between two lifts, without wrapping by the monodromy."""
    return chart.distance(a_lift, b_lift)
