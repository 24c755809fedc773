"""Finite-difference affine Laplacian, tension field and the parabolic flow.

The domain is a grid on a fundamental domain of an affine torus (periodic
boundary) or on a box (Dirichlet boundary).  Only point values of the
inverse metric ``gamma^{ab}`` enter: the operator

    L u = gamma^{ab} d_a d_b u

is in non-divergence form and is discretized with central second
differences on-axis and the symmetric four-point cross stencil for the mixed
partial.

Maps are stored as lifts on the fundamental domain.  A neighbour outside the
fundamental domain is brought back by the domain's deck action, which also
reports how many times each deck generator was used; the neighbour's value is
then the stored value plus the corresponding sum of target translations
(``MapField.monodromy_shifts``).  Those shifts are fixed when the map is
created and the flow never touches them.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CFLViolation, ChartExit, MonodromyMismatch, NotPositiveDefinite, ShapeMismatch
from .hessian_geometry import PotentialFunction, check_spd, dual_metric
from .targets import TargetChart, make_euclidean

__all__ = [
    "Boundary",
    "Scheme",
    "Outcome",
    "TranslationAction",
    "QuadraticShearAction",
    "DomainGrid",
    "MapField",
    "FlowConfig",
    "TraceSample",
    "FlowTrace",
    "affine_laplacian",
    "tension_field",
    "flow_step",
    "run_flow",
    "monitor_kinetic",
    "monitor_eta",
    "monitor_homotopy_distance",
    "monitor_residual",
    "cfl_bound",
    "worker_count",
]

THREADS_ENV = "AFFINE_FLOW_THREADS"


class Boundary(enum.Enum):
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


class Scheme(enum.Enum):
    EXPLICIT_EULER = "euler"
    RK4 = "rk4"


class Outcome(enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    MAX_TIME_REACHED = "MaxTimeReached"


# --------------------------------------------------------------------------
# deck actions on grid indices


class TranslationAction:
    """Deck group of a rectangular torus: one translation generator per axis."""

    name = "translation"

    def n_generators(self, dim: int) -> int:
        return dim

    def check(self, shape, spacing):
        pass

    def reduce(self, idx: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
        """Map integer indices ``(..., dim)`` into the fundamental domain.

        Returns the reduced indices and the generator counts ``(..., dim)``.
        """
        shape = np.asarray(shape)
        counts = np.floor_divide(idx, shape)
        return idx - counts * shape, counts


class QuadraticShearAction:
    """The affine Z^2 action ``(x, y) -> (x + n y + m + n^2/2, y + n)`` on the unit square.

    Generator counts are ``(m, n)``.  The grid must be square with an even
    number of cells so that every shear lands on a node.
    """

    name = "quadratic_shear"

    def n_generators(self, dim: int) -> int:
        return 2

    def check(self, shape, spacing):
        if len(shape) != 2 or shape[0] != shape[1] or shape[0] % 2:
            raise ValueError(f"quadratic_shear needs a square 2-D grid with an even cell count, got {tuple(shape)}")
        if any(abs(n * h - 1.0) > 1e-12 for n, h in zip(shape, spacing)):
            raise ValueError("quadratic_shear needs the unit square as fundamental domain")

    def reduce(self, idx, shape):
        N = int(shape[0])
        i, j = idx[..., 0], idx[..., 1]
        n = np.floor_divide(j, N)
        jr = j - n * N
        i1 = i - n * jr - (n * n * N) // 2
        m = np.floor_divide(i1, N)
        ir = i1 - m * N
        return np.stack([ir, jr], axis=-1), np.stack([m, n], axis=-1)


_ACTIONS = {"translation": TranslationAction, "quadratic_shear": QuadraticShearAction}


def _offsets(dim: int) -> list[tuple[int, ...]]:
    if dim == 1:
        return [(1,), (-1,)]
    return [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)]


# --------------------------------------------------------------------------
# grid


@dataclass(eq=False)
class DomainGrid:
    """Sampled domain: cell counts, spacing, boundary mode and ``gamma^{ab}`` per node.

    Periodic grids have ``shape`` nodes per axis at ``i * h``; Dirichlet grids
    have ``shape + 1`` nodes per axis, the outer ring being the boundary.
    ``inverse_metric`` has shape ``node_shape + (dim, dim)``.
    """

    shape: tuple
    spacing: tuple
    boundary: Boundary
    inverse_metric: np.ndarray
    action: object = None

    def __post_init__(self):
        self.shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        self.spacing = tuple(float(h) for h in np.atleast_1d(self.spacing))
        self.boundary = Boundary(self.boundary)
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        if len(self.spacing) != self.dim:
            raise ShapeMismatch(f"spacing {self.spacing} does not match shape {self.shape}")
        if any(n < 4 for n in self.shape):
            raise ValueError(f"need at least 4 cells per axis, got {self.shape}")
        if any(not h > 0 for h in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.boundary is Boundary.PERIODIC:
            if self.action is None:
                self.action = TranslationAction()
            elif isinstance(self.action, str):
                self.action = _ACTIONS[self.action]()
            self.action.check(self.shape, self.spacing)
        else:
            self.action = None
        G = np.asarray(self.inverse_metric, dtype=float)
        if G.shape == (self.dim, self.dim):
            G = np.broadcast_to(G, self.node_shape + G.shape)
        if G.shape != self.node_shape + (self.dim, self.dim):
            raise ShapeMismatch(f"inverse metric has shape {G.shape}, expected {self.node_shape + (self.dim, self.dim)}")
        G = np.ascontiguousarray(G)
        flat = G.reshape(-1, self.dim, self.dim)
        if not np.array_equal(flat, flat.transpose(0, 2, 1)):
            raise NotPositiveDefinite("inverse metric is not symmetric at every node")
        eig = np.linalg.eigvalsh(flat)
        tr = np.trace(flat, axis1=1, axis2=2)
        if not np.all(eig[:, 0] > 1e-12 * tr):
            bad = int(np.argmin(eig[:, 0] - 1e-12 * tr))
            raise NotPositiveDefinite(f"inverse metric not positive definite at node {bad}")
        self.inverse_metric = G
        self._lambda_max = float(eig[:, -1].max())

    # -- constructors

    @classmethod
    def from_function(cls, shape, side=1.0, boundary=Boundary.PERIODIC, inverse_metric=None, action=None):
        """Build a grid, sampling ``inverse_metric(coords) -> (..., dim, dim)`` at the nodes.

        ``inverse_metric=None`` means the identity.
        """
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        side = np.broadcast_to(np.asarray(side, dtype=float), (len(shape),))
        spacing = tuple(float(s / n) for s, n in zip(side, shape))
        boundary = Boundary(boundary)
        node_shape = shape if boundary is Boundary.PERIODIC else tuple(n + 1 for n in shape)
        coords = _node_coords(node_shape, spacing)
        if inverse_metric is None:
            G = np.eye(len(shape))
        else:
            G = np.asarray(inverse_metric(coords), dtype=float)
        return cls(shape, spacing, boundary, G, action)

    @classmethod
    def from_potential(cls, potential: PotentialFunction, shape, side=1.0, boundary=Boundary.PERIODIC,
                       action=None):
        """Sample ``gamma^{ab}`` as the inverse Hessian of ``potential`` at every node."""
        if potential.dim != len(np.atleast_1d(shape)):
            raise ShapeMismatch(f"potential dimension {potential.dim} does not match grid shape {shape}")

        def inv(coords):
            out = np.empty(coords.shape[:-1] + (potential.dim, potential.dim))
            for idx in np.ndindex(coords.shape[:-1]):
                out[idx] = dual_metric(potential, coords[idx])
            return out

        return cls.from_function(shape, side, boundary, inv, action)

    # -- geometry

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def node_shape(self) -> tuple:
        if self.boundary is Boundary.PERIODIC:
            return self.shape
        return tuple(n + 1 for n in self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def h_min(self) -> float:
        return min(self.spacing)

    @property
    def lambda_max(self) -> float:
        """Largest eigenvalue of ``gamma^{ab}`` over the grid."""
        return self._lambda_max

    @property
    def n_generators(self) -> int:
        return 0 if self.action is None else self.action.n_generators(self.dim)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``node_shape + (dim,)``."""
        return _node_coords(self.node_shape, self.spacing)

    @cached_property
    def interior(self) -> np.ndarray:
        """Flat boolean mask of nodes where the tension is evaluated."""
        mask = np.ones(self.node_shape, dtype=bool)
        if self.boundary is Boundary.DIRICHLET:
            inner = np.zeros(self.node_shape, dtype=bool)
            inner[tuple(slice(1, -1) for _ in self.node_shape)] = True
            mask = inner
        return mask.reshape(-1)

    @cached_property
    def _gamma_flat(self) -> np.ndarray:
        return self.inverse_metric.reshape(-1, self.dim, self.dim)

    @cached_property
    def neighbor_table(self) -> dict:
        """``offset -> (flat neighbour indices, generator counts)`` for every node."""
        idx = np.indices(self.node_shape).reshape(self.dim, -1).T
        table = {}
        for off in _offsets(self.dim):
            nb = idx + np.asarray(off)
            if self.boundary is Boundary.PERIODIC:
                nb, counts = self.action.reduce(nb, self.shape)
            else:
                nb = np.clip(nb, 0, np.asarray(self.node_shape) - 1)
                counts = np.zeros((len(idx), 0), dtype=int)
            flat = np.ravel_multi_index(tuple(nb.T), self.node_shape)
            table[off] = (flat, counts)
        return table

    def neighbor_shifts(self, shifts: np.ndarray) -> dict:
        """Per-offset additive corrections ``counts @ shifts``, shape ``(n_nodes, p)``."""
        out = {}
        for off, (_, counts) in self.neighbor_table.items():
            if counts.shape[1] == 0 or not np.any(shifts):
                out[off] = None
            else:
                out[off] = counts.astype(float) @ shifts
        return out


def _node_coords(node_shape, spacing) -> np.ndarray:
    axes = [np.arange(n) * h for n, h in zip(node_shape, spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


# --------------------------------------------------------------------------
# maps


@dataclass(eq=False)
class MapField:
    """A map from grid nodes into a target chart, stored as a lift.

    ``values`` has shape ``node_shape + (p,)`` where ``p = chart.dim``;
    ``monodromy_shifts[k]`` is the target translation picked up when a point
    is moved by the ``k``-th deck generator of the domain.
    """

    values: np.ndarray
    chart: TargetChart
    monodromy_shifts: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != self.chart.dim:
            raise ShapeMismatch(f"map values end in {self.values.shape[-1]}, chart has dimension {self.chart.dim}")
        if self.monodromy_shifts is None:
            self.monodromy_shifts = np.zeros((0, self.chart.dim))
        self.monodromy_shifts = np.asarray(self.monodromy_shifts, dtype=float).reshape(-1, self.chart.dim)
        for s in self.monodromy_shifts:
            if not self.chart.is_isometric_translation(s):
                raise ValueError(f"monodromy shift {s} is not an isometry of {self.chart.name}")
        self.chart.validate(self.values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.chart.dim)

    def with_values(self, values) -> "MapField":
        return MapField(np.asarray(values).reshape(self.values.shape), self.chart, self.monodromy_shifts)

    def shifts_for(self, grid: DomainGrid) -> np.ndarray:
        """Monodromy shifts padded to the number of deck generators of ``grid``."""
        k = grid.n_generators
        s = self.monodromy_shifts
        if s.shape[0] > k:
            raise ShapeMismatch(f"map has {s.shape[0]} monodromy shifts, grid has {k} deck generators")
        if s.shape[0] < k:
            s = np.vstack([s, np.zeros((k - s.shape[0], self.chart.dim))])
        return s

    def check_grid(self, grid: DomainGrid):
        if self.values.shape[:-1] != grid.node_shape:
            raise ShapeMismatch(f"map has node shape {self.values.shape[:-1]}, grid has {grid.node_shape}")


# --------------------------------------------------------------------------
# discrete operators


class _Stencil:
    """Neighbour indices and monodromy corrections bound to one grid and one shift set."""

    def __init__(self, grid: DomainGrid, shifts: np.ndarray):
        self.grid = grid
        self.table = {off: flat for off, (flat, _) in grid.neighbor_table.items()}
        self.corr = grid.neighbor_shifts(shifts)

    def neighbor(self, U, off, lo, hi):
        v = np.take(U, self.table[off][lo:hi], axis=0)
        c = self.corr[off]
        if c is not None:
            v = v + c[lo:hi]
        return v


def _derivatives(st: _Stencil, U: np.ndarray, lo: int, hi: int, first: bool = True):
    """First differences ``D[a]`` and second differences ``D2[a][b]`` on nodes ``lo:hi``.

    ``D`` is None when ``first`` is False.
    """
    grid = st.grid
    h = grid.spacing
    Uc = U[lo:hi]
    if grid.dim == 1:
        up, dn = st.neighbor(U, (1,), lo, hi), st.neighbor(U, (-1,), lo, hi)
        D = [(up - dn) / (2 * h[0])] if first else None
        D2 = [[(up - 2 * Uc + dn) / h[0] ** 2]]
        return D, D2
    xp, xm = st.neighbor(U, (1, 0), lo, hi), st.neighbor(U, (-1, 0), lo, hi)
    yp, ym = st.neighbor(U, (0, 1), lo, hi), st.neighbor(U, (0, -1), lo, hi)
    pp, mm = st.neighbor(U, (1, 1), lo, hi), st.neighbor(U, (-1, -1), lo, hi)
    pm, mp = st.neighbor(U, (1, -1), lo, hi), st.neighbor(U, (-1, 1), lo, hi)
    D = [(xp - xm) / (2 * h[0]), (yp - ym) / (2 * h[1])] if first else None
    dxy = (pp + mm - pm - mp) / (4 * h[0] * h[1])
    D2 = [[(xp - 2 * Uc + xm) / h[0] ** 2, dxy], [dxy, (yp - 2 * Uc + ym) / h[1] ** 2]]
    return D, D2


def _tension_block(st: _Stencil, U: np.ndarray, chart: TargetChart, lo: int, hi: int) -> np.ndarray:
    grid = st.grid
    gam = grid._gamma_flat[lo:hi]
    D, D2 = _derivatives(st, U, lo, hi, first=not chart.is_flat)
    d = grid.dim
    out = gam[:, 0, 0, None] * D2[0][0]
    for a in range(d):
        for b in range(d):
            if a or b:
                out += gam[:, a, b, None] * D2[a][b]
    if not chart.is_flat:
        Gam = chart.christoffels(U[lo:hi])
        p = U.shape[1]
        for a in range(d):
            for b in range(d):
                for j in range(p):
                    for k in range(p):
                        out += gam[:, a, b, None] * Gam[:, :, j, k] * (D[a][:, j] * D[b][:, k])[:, None]
    mask = grid.interior[lo:hi]
    if not mask.all():
        out[~mask] = 0.0
    return out


def worker_count(workers: Optional[int] = None) -> int:
    """Resolve a worker count; ``None`` reads ``AFFINE_FLOW_THREADS`` (unset means 1, 0 means all cores)."""
    if workers is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        workers = int(raw) if raw else 1
    if workers <= 0:
        workers = os.cpu_count() or 1
    return int(workers)


def _apply_blocks(fn, n: int, workers: int) -> np.ndarray:
    if workers <= 1 or n < 2 * workers:
        return fn(0, n)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda k: fn(bounds[k], bounds[k + 1]), range(workers)))
    return np.concatenate(parts, axis=0)


def _tension_flat(grid, st, U, chart, workers=1):
    return _apply_blocks(lambda lo, hi: _tension_block(st, U, chart, lo, hi), grid.n_nodes, workers)


def affine_laplacian(grid: DomainGrid, u, shifts=None) -> np.ndarray:
    """``gamma^{ab} D2_ab u`` at every node (zero on Dirichlet boundary nodes).

    ``shifts`` gives the additive monodromy of ``u`` per deck generator, for
    scalar lifts that are equivariant rather than periodic.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != grid.node_shape:
        raise ShapeMismatch(f"field has shape {u.shape}, grid nodes are {grid.node_shape}")
    s = np.zeros((grid.n_generators, 1))
    if shifts is not None:
        s[: len(np.atleast_1d(shifts)), 0] = np.atleast_1d(shifts)
    st = _Stencil(grid, s)
    out = _tension_flat(grid, st, u.reshape(-1, 1), make_euclidean(1))
    return out.reshape(grid.node_shape)


def tension_field(grid: DomainGrid, f: MapField, workers: Optional[int] = None) -> np.ndarray:
    """Discrete tension ``gamma^{ab}(D2_ab f^i + Gamma^i_jk(f) D_a f^j D_b f^k)``.

    Returns an array shaped like ``f.values``; zero on Dirichlet boundary nodes.
    """
    f.check_grid(grid)
    f.chart.validate(f.values)
    st = _Stencil(grid, f.shifts_for(grid))
    return _tension_flat(grid, st, f.flat, f.chart, worker_count(workers)).reshape(f.values.shape)


# --------------------------------------------------------------------------
# configuration and trace


def cfl_bound(grid: DomainGrid, cfl_safety: float = 0.5) -> float:
    """Largest admissible explicit step ``cfl_safety h_min^2 / (2 dim lambda_max)``."""
    return cfl_safety * grid.h_min**2 / (2 * grid.dim * grid.lambda_max)


@dataclass(frozen=True)
class FlowConfig:
    """Time stepping and stopping parameters.

    ``dt=None`` selects the CFL bound for the grid.  Runs stop as Diverged
    when the sup homotopy distance exceeds
    ``divergence_factor * (first sampled sup distance + 1)`` while the sup
    kinetic density is above ``tol_residual``.
    """

    t_end: float
    dt: Optional[float] = None
    scheme: Scheme = Scheme.EXPLICIT_EULER
    tol_residual: float = 1e-8
    cfl_safety: float = 0.5
    monitor_every: int = 1
    divergence_factor: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if not self.tol_residual > 0:
            raise ValueError(f"tol_residual must be positive, got {self.tol_residual}")
        if int(self.monitor_every) < 1:
            raise ValueError(f"monitor_every must be >= 1, got {self.monitor_every}")

    def resolved(self, grid: DomainGrid) -> "FlowConfig":
        """Copy with ``dt`` filled in and checked against the CFL bound of ``grid``."""
        bound = cfl_bound(grid, self.cfl_safety)
        if self.dt is None:
            return replace(self, dt=bound)
        if self.dt > bound * (1 + 1e-12):
            raise CFLViolation(
                f"dt={self.dt:.6g} exceeds the CFL bound cfl_safety*h_min^2/(2*dim*lambda_max) = {bound:.6g} "
                f"(h_min={grid.h_min:.6g}, lambda_max={grid.lambda_max:.6g}, cfl_safety={self.cfl_safety})"
            )
        return self


@dataclass(frozen=True)
class TraceSample:
    t: float
    sup_kinetic: float
    sup_eta: float
    sup_dtilde: float
    inf_dtilde: float
    sup_residual: float


TRACE_COLUMNS = ("t", "sup_kinetic", "sup_eta", "sup_dtilde", "inf_dtilde", "sup_residual")


@dataclass
class FlowTrace:
    samples: list = field(default_factory=list)
    outcome: Optional[Outcome] = None
    dt: float = 0.0
    h_min: float = 0.0

    def append(self, sample: TraceSample):
        if self.samples and not sample.t > self.samples[-1].t:
            raise ValueError("trace samples must be strictly increasing in t")
        self.samples.append(sample)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples])

    @property
    def epsilon_mono(self) -> float:
        """Slack allowed for the discrete monotonicity of ``sup_kinetic``."""
        if not self.samples:
            return 0.0
        return 1e-6 * self.samples[0].sup_kinetic + 10 * self.dt * self.h_min**2

    def kinetic_violations(self) -> list:
        """Indices ``k`` with ``sup_kinetic[k] > sup_kinetic[k-1] + epsilon_mono``."""
        kin = self.column("sup_kinetic")
        eps = self.epsilon_mono
        return [k for k in range(1, len(kin)) if kin[k] > kin[k - 1] + eps]

    @property
    def kinetic_monotone(self) -> bool:
        return not self.kinetic_violations()


# --------------------------------------------------------------------------
# monitors


def monitor_kinetic(grid: DomainGrid, f_prev: MapField, f_next: MapField, dt: float) -> float:
    """``sup g_ij(f_next) fdot^i fdot^j`` with ``fdot = (f_next - f_prev) / dt``."""
    v = (f_next.flat - f_prev.flat) / dt
    g = f_next.chart.metric(f_next.flat)
    return float(np.max(np.einsum("ni,nij,nj->n", v, g, v)))


def _first_differences(grid, f):
    st = _Stencil(grid, f.shifts_for(grid))
    D, _ = _derivatives(st, f.flat, 0, grid.n_nodes)
    return D


def monitor_eta(grid: DomainGrid, f: MapField) -> float:
    """``sup gamma^{ab} g_ij(f) D_a f^i D_b f^j`` over interior nodes."""
    D = _first_differences(grid, f)
    g = f.chart.metric(f.flat)
    gam = grid._gamma_flat
    eta = np.zeros(grid.n_nodes)
    for a in range(grid.dim):
        for b in range(grid.dim):
            eta += gam[:, a, b] * np.einsum("ni,nij,nj->n", D[a], g, D[b])
    return float(np.max(eta[grid.interior]))


def monitor_homotopy_distance(grid: DomainGrid, f: MapField, f0: MapField) -> tuple[float, float]:
    """Sup and inf over nodes of the cover distance between the lifts of ``f`` and ``f0``."""
    if f.chart is not f0.chart and f.chart != f0.chart:
        raise MonodromyMismatch(f"maps live in different charts: {f.chart.name} vs {f0.chart.name}")
    if f.monodromy_shifts.shape != f0.monodromy_shifts.shape or not np.array_equal(
        f.monodromy_shifts, f0.monodromy_shifts
    ):
        raise MonodromyMismatch("maps have different monodromy shifts")
    d = f.chart.distance(f.flat, f0.flat)
    return float(np.max(d)), float(np.min(d))


def monitor_residual(grid: DomainGrid, f: MapField, sigma: Optional[np.ndarray] = None) -> float:
    """``sup sqrt(g_ij sigma^i sigma^j)`` over interior nodes."""
    if sigma is None:
        sigma = tension_field(grid, f)
    s = sigma.reshape(-1, f.chart.dim)
    g = f.chart.metric(f.flat)
    norm2 = np.einsum("ni,nij,nj->n", s, g, s)
    return float(np.sqrt(np.max(norm2[grid.interior])))


# --------------------------------------------------------------------------
# time stepping


def _check_valid(f_chart: TargetChart, U: np.ndarray):
    bad = f_chart.invalid_mask(U)
    if np.any(bad):
        node = int(np.argmax(bad))
        raise ChartExit(f"node {node} left the chart {f_chart.name}: value {U[node]}", node=node, value=U[node].copy())


def _advance(grid, st, U, chart, dt, scheme, workers, sigma=None):
    if sigma is None:
        sigma = _tension_flat(grid, st, U, chart, workers)
    if scheme is Scheme.EXPLICIT_EULER:
        out = U + dt * sigma
    else:
        k1 = sigma
        s2 = U + 0.5 * dt * k1
        _check_valid(chart, s2)
        k2 = _tension_flat(grid, st, s2, chart, workers)
        s3 = U + 0.5 * dt * k2
        _check_valid(chart, s3)
        k3 = _tension_flat(grid, st, s3, chart, workers)
        s4 = U + dt * k3
        _check_valid(chart, s4)
        k4 = _tension_flat(grid, st, s4, chart, workers)
        out = U + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    _check_valid(chart, out)
    return out


def flow_step(grid: DomainGrid, f: MapField, cfg: FlowConfig, workers: Optional[int] = None) -> MapField:
    """Advance ``f`` by one time step of the configured scheme."""
    cfg = cfg.resolved(grid)
    f.check_grid(grid)
    st = _Stencil(grid, f.shifts_for(grid))
    U = _advance(grid, st, f.flat, f.chart, cfg.dt, cfg.scheme, worker_count(workers))
    return f.with_values(U)


def run_flow(
    grid: DomainGrid,
    f0: MapField,
    cfg: FlowConfig,
    callback: Optional[Callable[[float, MapField], None]] = None,
    workers: Optional[int] = None,
) -> tuple[MapField, FlowTrace]:
    """Integrate the flow from ``f0`` until convergence, divergence or ``t_end``.

    Monitors are sampled every ``cfg.monitor_every`` steps and after the last
    step; ``callback(t, f)`` is called with the map at each sample.

    Raises
    ------
    ChartExit
        If a node leaves the chart; ``exc.trace`` holds the samples so far.
    """
    cfg = cfg.resolved(grid)
    f0.check_grid(grid)
    workers = worker_count(workers)
    chart = f0.chart
    st = _Stencil(grid, f0.shifts_for(grid))
    trace = FlowTrace(dt=cfg.dt, h_min=grid.h_min)

    n_full = int(math.floor(cfg.t_end / cfg.dt * (1 + 1e-12)))
    last_dt = cfg.t_end - n_full * cfg.dt
    n_steps = n_full + (1 if last_dt > 1e-12 * cfg.dt else 0)

    U = f0.flat.copy()
    sigma = None
    threshold = None
    step = 0
    try:
        while step < n_steps:
            dt = cfg.dt if step < n_full else last_dt
            U_next = _advance(grid, st, U, chart, dt, cfg.scheme, workers, sigma)
            sigma = None
            step += 1
            if step % cfg.monitor_every and step != n_steps:
                U = U_next
                continue
            t = cfg.t_end if step == n_steps else step * cfg.dt
            f_prev, f_next = f0.with_values(U), f0.with_values(U_next)
            sigma = _tension_flat(grid, st, U_next, chart, workers)
            kin = monitor_kinetic(grid, f_prev, f_next, dt)
            sup_d, inf_d = monitor_homotopy_distance(grid, f_next, f0)
            sample = TraceSample(
                t=float(t),
                sup_kinetic=kin,
                sup_eta=monitor_eta(grid, f_next),
                sup_dtilde=sup_d,
                inf_dtilde=inf_d,
                sup_residual=monitor_residual(grid, f_next, sigma),
            )
            trace.append(sample)
            U = U_next
            if callback is not None:
                callback(sample.t, f_next)
            if threshold is None:
                threshold = cfg.divergence_factor * (sample.sup_dtilde + 1.0)
            if sample.sup_residual <= cfg.tol_residual:
                trace.outcome = Outcome.CONVERGED
                break
            if sample.sup_dtilde > threshold and sample.sup_kinetic > cfg.tol_residual:
                trace.outcome = Outcome.DIVERGED
                break
        else:
            trace.outcome = Outcome.MAX_TIME_REACHED
    except ChartExit as exc:
        exc.trace = trace
        raise
    return f0.with_values(U), trace
