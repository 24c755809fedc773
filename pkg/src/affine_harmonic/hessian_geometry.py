"""Hessian (Kähler affine) geometry of a convex potential.

A convex potential ``F`` on an affine chart defines the metric
``gamma = d^2 F``, the family of torsion-free connections

    Gamma^(s)_{abd} = (1 - s)/2 * d_a d_b d_d F,      -1 <= s <= 1,

(all indices lowered with ``gamma``), dual coordinates ``xi = grad F`` and
the Legendre potential ``Phi(xi) = x . xi - F(x)``.  ``s = 1`` is the flat
connection of the chart, ``s = 0`` the Levi-Civita connection of ``gamma``.

Potentials must be C^3 on the region where they are evaluated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NewtonDiverged, NotPositiveDefinite

__all__ = [
    "PotentialFunction",
    "ConnectionCoefficients",
    "DualChart",
    "quadratic",
    "sum_exp",
    "log_sum_exp",
    "finite_difference_potential",
    "potential_from_name",
    "POTENTIAL_CATALOG",
    "check_spd",
    "metric_from_potential",
    "s_connection",
    "duality_residual",
    "to_dual_coordinates",
    "legendre_dual",
    "dual_metric",
]

SPD_RELATIVE_THRESHOLD = 1e-12
NEWTON_MAX_ITER = 100
NEWTON_RTOL = 1e-10


@dataclass(frozen=True)
class PotentialFunction:
    """A convex potential together with its first three derivatives.

    All callables take a point of shape ``(dim,)``.  ``hess`` must return a
    symmetric ``(dim, dim)`` array and ``third`` a fully symmetric
    ``(dim, dim, dim)`` array.
    """

    dim: int
    eval: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    third: Callable[[np.ndarray], np.ndarray]
    name: str = "potential"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")


@dataclass(frozen=True)
class ConnectionCoefficients:
    """Lowered Christoffel symbols ``Gamma^(s)_{abd}`` at one point.

    ``coeffs[a, b, d]`` is ``<nabla_{d_a} d_b, d_d>``; ``levi_civita`` holds
    the ``s = 0`` member of the family at the same point.
    """

    s: float
    coeffs: np.ndarray
    levi_civita: np.ndarray

    def raised(self, metric: np.ndarray) -> np.ndarray:
        """Return ``Gamma^m_{ab}`` by raising the last index with ``metric``."""
        # solve instead of inverting: gamma_{md} G^m_{ab} = G_{abd}
        n = self.coeffs.shape[0]
        flat = self.coeffs.reshape(n * n, n).T
        return np.linalg.solve(metric, flat).T.reshape(n, n, n).transpose(2, 0, 1)


@dataclass(frozen=True)
class DualChart:
    """Dual coordinates ``xi``, the Legendre potential at ``xi`` and the primal point."""

    xi: np.ndarray
    phi: float
    x: np.ndarray
    iterations: int = 0


# --------------------------------------------------------------------------
# catalog


def _exactly_symmetric(T: np.ndarray) -> np.ndarray:
    # copy each entry from its sorted index triple so permutations agree bitwise
    idx = np.sort(np.indices(T.shape), axis=0)
    return T[idx[0], idx[1], idx[2]]


def quadratic(A) -> PotentialFunction:
    """``F(x) = 1/2 x^T A x`` for a symmetric matrix ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"quadratic potential needs a square matrix, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise ValueError("quadratic potential needs a symmetric matrix")
    n = A.shape[0]
    zeros3 = np.zeros((n, n, n))

    return PotentialFunction(
        dim=n,
        eval=lambda x: 0.5 * float(np.asarray(x) @ A @ np.asarray(x)),
        grad=lambda x: A @ np.asarray(x, dtype=float),
        hess=lambda x: A.copy(),
        third=lambda x: zeros3.copy(),
        name="quadratic(" + "; ".join(" ".join(repr(float(v)) for v in row) for row in A) + ")",
    )


def sum_exp(dim: int = 2) -> PotentialFunction:
    """``F(x) = sum_i exp(x_i)``."""

    def third(x):
        e = np.exp(np.asarray(x, dtype=float))
        out = np.zeros((dim, dim, dim))
        out[np.arange(dim), np.arange(dim), np.arange(dim)] = e
        return out

    return PotentialFunction(
        dim=dim,
        eval=lambda x: float(np.sum(np.exp(x))),
        grad=lambda x: np.exp(np.asarray(x, dtype=float)),
        hess=lambda x: np.diag(np.exp(np.asarray(x, dtype=float))),
        third=third,
        name="sum_exp",
    )


def log_sum_exp(dim: int = 2) -> PotentialFunction:
    """``F(x) = log(1 + sum_i exp(x_i))``, the categorical log-partition function.

    The constant ``1`` inside the logarithm makes ``F`` strictly convex; its
    gradient image is the open simplex ``{xi_i > 0, sum xi < 1}``.
    """

    def probs(x):
        x = np.asarray(x, dtype=float)
        m = max(0.0, float(np.max(x)))
        e = np.exp(x - m)
        return e / (np.exp(-m) + e.sum())

    def value(x):
        x = np.asarray(x, dtype=float)
        m = max(0.0, float(np.max(x)))
        return float(m + np.log(np.exp(-m) + np.sum(np.exp(x - m))))

    def hess(x):
        p = probs(x)
        return np.diag(p) - np.outer(p, p)

    def third(x):
        p = probs(x)
        eye = np.eye(dim)
        out = 2.0 * np.einsum("i,j,k->ijk", p, p, p)
        out -= np.einsum("ij,i,k->ijk", eye, p, p)
        out -= np.einsum("ik,i,j->ijk", eye, p, p)
        out -= np.einsum("jk,i,j->ijk", eye, p, p)
        out[np.arange(dim), np.arange(dim), np.arange(dim)] += p
        return _exactly_symmetric(out)

    return PotentialFunction(dim=dim, eval=value, grad=probs, hess=hess, third=third, name="log_sum_exp")


def finite_difference_potential(
    func: Callable[[np.ndarray], float], dim: int, step: float = 1e-3, name: str = "fd"
) -> PotentialFunction:
    """Wrap a value-only potential, supplying derivatives by central differences.

    ``grad`` and ``hess`` difference ``func`` directly; ``third`` differences the
    finite-difference Hessian.  Truncation error is ``O(step**2)``.
    """
    h = float(step)
    basis = np.eye(dim) * h

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.array([(func(x + e) - func(x - e)) / (2 * h) for e in basis])

    def hess(x):
        x = np.asarray(x, dtype=float)
        out = np.empty((dim, dim))
        f0 = func(x)
        for a in range(dim):
            ea = basis[a]
            out[a, a] = (func(x + ea) - 2 * f0 + func(x - ea)) / h**2
            for b in range(a):
                eb = basis[b]
                v = (func(x + ea + eb) + func(x - ea - eb) - func(x + ea - eb) - func(x - ea + eb)) / (4 * h * h)
                out[a, b] = out[b, a] = v
        return out

    def third(x):
        x = np.asarray(x, dtype=float)
        out = np.empty((dim, dim, dim))
        for d in range(dim):
            out[:, :, d] = (hess(x + basis[d]) - hess(x - basis[d])) / (2 * h)
        sym = (
            out
            + out.transpose(0, 2, 1)
            + out.transpose(1, 0, 2)
            + out.transpose(1, 2, 0)
            + out.transpose(2, 0, 1)
            + out.transpose(2, 1, 0)
        ) / 6.0
        return _exactly_symmetric(sym)

    return PotentialFunction(dim=dim, eval=lambda x: float(func(np.asarray(x, dtype=float))), grad=grad,
                             hess=hess, third=third, name=name)


POTENTIAL_CATALOG = ("quadratic(A)", "sum_exp", "log_sum_exp")

_NAME_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _parse_matrix(text: str) -> np.ndarray:
    rows = [r for r in text.split(";")]
    data = [[float(v) for v in r.replace(",", " ").split()] for r in rows]
    return np.array(data, dtype=float)


def potential_from_name(spec: str, dim: int = 2) -> PotentialFunction:
    """Build a catalog potential from its config-file name.

    Accepted forms: ``quadratic(2 1; 1 3)`` (rows separated by ``;``),
    ``sum_exp``, ``log_sum_exp``.  ``dim`` applies to the non-quadratic entries.
    """
    m = _NAME_RE.match(spec)
    if m is None:
        raise ValueError(f"cannot parse potential name {spec!r}")
    kind, args = m.group(1), m.group(2)
    if kind == "quadratic":
        if not args:
            return quadratic(np.eye(dim))
        return quadratic(_parse_matrix(args))
    if args:
        raise ValueError(f"potential {kind!r} takes no parameters")
    if kind == "sum_exp":
        return sum_exp(dim)
    if kind == "log_sum_exp":
        return log_sum_exp(dim)
    raise ValueError(f"unknown potential {kind!r}; known: {', '.join(POTENTIAL_CATALOG)}")


# --------------------------------------------------------------------------
# operations


def check_spd(matrix: np.ndarray) -> np.ndarray:
    """Raise :class:`NotPositiveDefinite` unless ``matrix`` is SPD.

    The smallest eigenvalue must exceed ``1e-12 * trace``.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=0.0):
        raise NotPositiveDefinite("matrix is not symmetric")
    eig = np.linalg.eigvalsh(matrix)
    tr = float(np.trace(matrix))
    if not (tr > 0 and eig[0] > SPD_RELATIVE_THRESHOLD * tr):
        raise NotPositiveDefinite(f"smallest eigenvalue {eig[0]:.3e} is not positive (trace {tr:.3e})")
    return matrix


def metric_from_potential(F: PotentialFunction, x, validate: bool = False) -> np.ndarray:
    """Hessian metric ``gamma_{ab} = d_a d_b F`` at ``x``."""
    g = np.asarray(F.hess(np.asarray(x, dtype=float)), dtype=float)
    if validate:
        check_spd(g)
    return g


def _check_s(s: float) -> float:
    s = float(s)
    if not -1.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [-1, 1], got {s}")
    return s


def s_connection(F: PotentialFunction, x, s: float) -> ConnectionCoefficients:
    """Lowered coefficients of the ``s``-connection at ``x``."""
    s = _check_s(s)
    T = np.asarray(F.third(np.asarray(x, dtype=float)), dtype=float)
    return ConnectionCoefficients(s=s, coeffs=0.5 * (1.0 - s) * T, levi_civita=0.5 * T)


def duality_residual(F: PotentialFunction, x, s: float, V, W, Z) -> float:
    """``|Z<V,W> - <nabla^(s)_Z V, W> - <V, nabla^(-s)_Z W>|`` for constant fields.

    The derivative of the metric along ``Z`` is the contraction of the third
    derivative of ``F``.  The covariant derivatives are formed as genuine
    vectors (index raised with ``gamma``) and then paired with the metric, so
    the result measures roundoff of the whole chain rather than an algebraic
    cancellation.
    """
    x = np.asarray(x, dtype=float)
    V, W, Z = (np.asarray(v, dtype=float) for v in (V, W, Z))
    g = metric_from_potential(F, x)
    T = np.asarray(F.third(x), dtype=float)
    dgamma = np.einsum("abd,a,b,d->", T, V, W, Z)

    plus = s_connection(F, x, s).raised(g)
    minus = s_connection(F, x, -s).raised(g)
    nabla_V = np.einsum("mab,a,b->m", plus, Z, V)
    nabla_W = np.einsum("mab,a,b->m", minus, Z, W)
    return float(abs(dgamma - nabla_V @ g @ W - V @ g @ nabla_W))


def to_dual_coordinates(F: PotentialFunction, x) -> np.ndarray:
    """Dual affine coordinates ``xi = grad F(x)``."""
    return np.asarray(F.grad(np.asarray(x, dtype=float)), dtype=float)


def legendre_dual(
    F: PotentialFunction,
    xi,
    x0: Optional[np.ndarray] = None,
    *,
    max_iter: int = NEWTON_MAX_ITER,
    rtol: float = NEWTON_RTOL,
) -> DualChart:
    """Solve ``grad F(x) = xi`` by damped Newton and return the Legendre data.

    Minimizes ``F(x) - x . xi`` with full Newton steps halved until the
    objective (or, once it is flat to roundoff, the gradient residual)
    decreases.  Converged when ``|grad F(x) - xi| <= rtol (1 + |xi|)``.

    Raises
    ------
    NewtonDiverged
        On hitting ``max_iter``, on a non-SPD Hessian, or when backtracking
        cannot decrease the objective.  Typically ``xi`` is outside the
        gradient image of ``F`` or ``x0`` is outside its domain.
    """
    xi = np.asarray(xi, dtype=float).reshape(F.dim)
    x = np.zeros(F.dim) if x0 is None else np.asarray(x0, dtype=float).reshape(F.dim).copy()
    tol = rtol * (1.0 + np.linalg.norm(xi))

    def objective(z):
        return F.eval(z) - z @ xi

    obj = objective(x)
    for it in range(max_iter + 1):
        r = to_dual_coordinates(F, x) - xi
        if not np.all(np.isfinite(r)):
            raise NewtonDiverged(f"non-finite gradient at iteration {it}")
        if np.linalg.norm(r) <= tol:
            x = _polish(F, x, xi, r)
            return DualChart(xi=xi, phi=float(x @ xi - F.eval(x)), x=x, iterations=it)
        if it == max_iter:
            break
        H = metric_from_potential(F, x)
        try:
            check_spd(H)
        except NotPositiveDefinite as exc:
            raise NewtonDiverged(f"Hessian not SPD at iteration {it}: {exc}") from exc
        step = -np.linalg.solve(H, r)
        lam = 1.0
        for _ in range(60):
            trial = x + lam * step
            t_obj = objective(trial)
            if np.isfinite(t_obj) and t_obj <= obj:
                break
            # near the minimum the objective is flat to roundoff; fall back on the gradient
            if np.isfinite(t_obj) and np.linalg.norm(to_dual_coordinates(F, trial) - xi) < np.linalg.norm(r):
                break
            lam *= 0.5
        else:
            raise NewtonDiverged(f"backtracking failed at iteration {it}")
        x, obj = trial, t_obj
    raise NewtonDiverged(f"no convergence after {max_iter} iterations (residual {np.linalg.norm(r):.3e})")


def _polish(F, x, xi, r):
    # one extra full Newton step; kept only if it shrinks the residual
    try:
        trial = x - np.linalg.solve(metric_from_potential(F, x), r)
    except np.linalg.LinAlgError:
        return x
    r_trial = to_dual_coordinates(F, trial) - xi
    if np.all(np.isfinite(r_trial)) and np.linalg.norm(r_trial) < np.linalg.norm(r):
        return trial
    return x


def dual_metric(F: PotentialFunction, x) -> np.ndarray:
    """Inverse metric ``gamma^{ab}``, i.e. the Hessian of the Legendre potential."""
    g = metric_from_potential(F, x, validate=True)
    inv = np.linalg.inv(g)
    return 0.5 * (inv + inv.T)
