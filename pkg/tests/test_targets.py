import numpy as np
import pytest

from affine_harmonic.errors import DegeneratePlane, DomainViolation
from affine_harmonic.targets import (
    CurvatureSign,
    chart_from_name,
    curvature_check_fd,
    lift_delta,
    make_euclidean,
    make_flat_torus,
    make_hyperbolic_half_plane,
)


def christoffels_from_metric(chart, y, h=1e-5):
    """Oracle: Levi-Civita symbols from central differences of the metric."""
    n = chart.dim
    dg = np.stack([(chart.metric(y + e) - chart.metric(y - e)) / (2 * h) for e in np.eye(n) * h])  # dg[l, j, k]
    ginv = np.linalg.inv(chart.metric(y))
    # Gamma^i_jk = 1/2 g^il (d_j g_kl + d_k g_jl - d_l g_jk)
    bracket = dg + np.einsum("kjl->jkl", dg) - np.einsum("ljk->jkl", dg)
    return 0.5 * np.einsum("il,jkl->ijk", ginv, bracket)


def random_half_plane_points(rng, n):
    return np.column_stack([rng.uniform(-3, 3, n), rng.uniform(0.05, 4, n)])


# euclidean / flat torus ------------------------------------------------------


def test_euclidean_examples():
    E1 = make_euclidean(1)
    assert E1.distance([0.0], [3.0]) == 3.0
    E2 = make_euclidean(2)
    assert np.all(E2.christoffels(np.array([[1.0, 2.0], [3.0, -4.0]])) == 0)
    assert E2.distance([0, 0], [3, 4]) == 5.0
    assert E2.monodromy == ()
    assert E2.curvature_sign is CurvatureSign.FLAT


def test_flat_torus_examples():
    C = make_flat_torus([1])
    assert C.monodromy == ((1.0,),)
    assert C.name == "circle"
    T = make_flat_torus([1, 1])
    assert np.all(T.christoffels([0.3, 0.9]) == 0)
    assert make_flat_torus([2]).distance([0.0], [3.0]) == 3.0


def test_flat_torus_rejects_bad_periods():
    with pytest.raises(ValueError):
        make_flat_torus([1, 0])


# hyperbolic half-plane ---------------------------------------------------------


def test_half_plane_christoffel_example():
    H = make_hyperbolic_half_plane()
    G = H.christoffels([0.0, 2.0])
    assert G[1, 0, 0] == 0.5
    np.testing.assert_allclose(G, christoffels_from_metric(H, np.array([0.0, 2.0])), atol=1e-8)


def test_half_plane_christoffels_match_metric_oracle():
    H = make_hyperbolic_half_plane()
    rng = np.random.default_rng(0)
    for y in random_half_plane_points(rng, 20):
        y[1] += 0.5
        np.testing.assert_allclose(H.christoffels(y), christoffels_from_metric(H, y), atol=1e-6)


def test_half_plane_distance_examples():
    H = make_hyperbolic_half_plane()
    assert H.distance([0, 1], [0, np.e]) == pytest.approx(1.0, abs=1e-14)
    # vertical geodesic length |ln(v2/v1)|
    assert H.distance([0, 0.3], [0, 1.7]) == pytest.approx(abs(np.log(1.7 / 0.3)), rel=1e-13)
    p = np.array([0.4, 0.8])
    assert H.distance(p, p) == 0.0


def test_half_plane_domain_guard():
    H = make_hyperbolic_half_plane()
    for bad in ([0.0, 0.0], [1.0, -1.0], [0.0, 1e-13]):
        with pytest.raises(DomainViolation):
            H.metric(bad)
        with pytest.raises(DomainViolation):
            H.christoffels(bad)
    with pytest.raises(DomainViolation):
        lift_delta(H, [0, 1], [0, -1])


def test_half_plane_isometric_translations():
    H = make_hyperbolic_half_plane()
    assert H.is_isometric_translation([2.0, 0.0])
    assert not H.is_isometric_translation([0.0, 1.0])


# invariants -------------------------------------------------------------------


CHARTS = [make_euclidean(2), make_flat_torus([1.0, 2.0]), make_flat_torus([1.0]), make_hyperbolic_half_plane()]


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.name)
def test_christoffel_symmetry_exact(chart):
    rng = np.random.default_rng(1)
    y = random_half_plane_points(rng, 50)[:, : chart.dim]
    G = chart.christoffels(y)
    assert np.array_equal(G, G.swapaxes(-1, -2))


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.name)
def test_distance_axioms_on_random_triples(chart):
    rng = np.random.default_rng(2)
    a, b, c = (random_half_plane_points(rng, 1000)[:, : chart.dim] for _ in range(3))
    dab, dbc, dac = chart.distance(a, b), chart.distance(b, c), chart.distance(a, c)
    assert np.all(chart.distance(a, a) == 0)
    np.testing.assert_array_equal(dab, chart.distance(b, a))
    assert np.all(dac <= dab + dbc + 1e-12)
    assert np.all(dab >= 0)


def test_curvature_flat_charts():
    rng = np.random.default_rng(3)
    for chart in (make_euclidean(2), make_flat_torus([1.0, 1.0]), make_euclidean(3)):
        for _ in range(20):
            y = rng.normal(size=chart.dim)
            X, Y = rng.normal(size=(2, chart.dim))
            assert abs(curvature_check_fd(chart, y, (X, Y))) <= 1e-6


def test_curvature_half_plane_coordinate_plane():
    H = make_hyperbolic_half_plane()
    assert curvature_check_fd(H, [0.0, 1.0], ([1, 0], [0, 1])) == pytest.approx(-1.0, abs=1e-4)


def test_curvature_half_plane_random():
    H = make_hyperbolic_half_plane()
    rng = np.random.default_rng(4)
    for y in random_half_plane_points(rng, 20):
        y[1] += 0.3
        X, Y = rng.normal(size=(2, 2))
        assert curvature_check_fd(H, y, (X, Y)) == pytest.approx(-1.0, abs=1e-4)


def test_degenerate_plane():
    with pytest.raises(DegeneratePlane):
        curvature_check_fd(make_euclidean(2), [0, 0], ([1, 2], [2, 4]))


# lifts -------------------------------------------------------------------------


def test_lift_delta_examples():
    assert lift_delta(chart_from_name("circle"), [0.2], [1.2]) == pytest.approx(1.0, abs=1e-15)
    assert lift_delta(make_euclidean(2), [1, 1], [4, 5]) == 5.0
    assert lift_delta(make_hyperbolic_half_plane(), [0, 1], [0, np.e**2]) == pytest.approx(2.0, abs=1e-14)


def test_chart_catalog_names():
    assert chart_from_name("euclidean(3)").dim == 3
    assert chart_from_name("flat_torus(1, 2)").monodromy == ((1.0, 0.0), (0.0, 2.0))
    assert chart_from_name("circle") == make_flat_torus([1])
    assert chart_from_name("hyperbolic_half_plane").curvature_sign is CurvatureSign.NEGATIVE
    for bad in ("sphere", "euclidean", "circle(2)"):
        with pytest.raises(ValueError):
            chart_from_name(bad)
    # names round-trip through the catalog parser
    for chart in CHARTS:
        assert chart_from_name(chart.name) == chart
