"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import functools
import time

import numpy as np
import pytest
import sympy as sp

from affine_harmonic.flow import DomainGrid, Outcome, affine_laplacian, cfl_bound
from affine_harmonic.hessian_geometry import (
    duality_residual,
    legendre_dual,
    log_sum_exp,
    quadratic,
    s_connection,
    sum_exp,
    to_dual_coordinates,
)
from affine_harmonic.scenarios import (
    build,
    builtin_counterexample,
    builtin_dirichlet_hyperbolic,
    builtin_flat_convergent,
    counterexample_inverse_metric,
    parse_config,
    run_scenario,
)
from affine_harmonic.targets import (
    curvature_check_fd,
    make_euclidean,
    make_flat_torus,
    make_hyperbolic_half_plane,
)

POTENTIALS = [
    quadratic([[2.0, 1.0], [1.0, 3.0]]),
    quadratic([[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]]),
    sum_exp(2),
    sum_exp(3),
    log_sum_exp(2),
    log_sum_exp(3),
]


@pytest.fixture
def report(record_property):
    def _report(number, text):
        record_property("acceptance", (number, text))
        print(f"criterion {number}: {text}")

    return _report


def test_criterion_1_connection_algebra(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for F in POTENTIALS:
        for _ in range(100):
            x = rng.normal(size=F.dim)
            s = rng.uniform(-1, 1)
            G1 = s_connection(F, x, 1.0).coeffs
            Gs, Gm, G0 = (s_connection(F, x, v).coeffs for v in (s, -s, 0.0))
            perms = [Gs.transpose(p) for p in ((1, 0, 2), (0, 2, 1), (2, 1, 0), (1, 2, 0), (2, 0, 1))]
            worst = max(
                worst,
                np.abs(G1).max(),
                np.abs(Gs + Gm - 2 * G0).max(),
                max(np.abs(Gs - P).max() for P in perms),
            )
    elapsed = time.perf_counter() - t0
    report(1, f"connection algebra max deviation {worst:.2e} (<= 1e-12), {elapsed:.2f} s (< 1 s)")
    assert worst <= 1e-12
    assert elapsed < 1.0


def test_criterion_2_duality_identity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for F in POTENTIALS:
        for _ in range(100):
            x = rng.normal(size=F.dim)
            V, W, Z = rng.normal(size=(3, F.dim))
            worst = max(worst, duality_residual(F, x, rng.uniform(-1, 1), V, W, Z))
    elapsed = time.perf_counter() - t0
    report(2, f"duality residual max {worst:.2e} (<= 1e-9), {elapsed:.2f} s (< 1 s)")
    assert worst <= 1e-9
    assert elapsed < 1.0


def test_criterion_3_legendre_roundtrip(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    worst_gap = worst_x = 0.0
    for F in POTENTIALS:
        for _ in range(100):
            x = rng.normal(size=F.dim)
            xi = to_dual_coordinates(F, x)
            dual = legendre_dual(F, xi)
            worst_gap = max(worst_gap, abs(F.eval(dual.x) + dual.phi - dual.x @ xi))
            worst_x = max(worst_x, np.linalg.norm(dual.x - x))
    elapsed = time.perf_counter() - t0
    report(3, f"Legendre |F+Phi-x.xi| max {worst_gap:.2e} (<= 1e-9), |dx| max {worst_x:.2e} (<= 1e-8), "
              f"{elapsed:.2f} s (< 5 s)")
    assert worst_gap <= 1e-9
    assert worst_x <= 1e-8
    assert elapsed < 5.0


@functools.lru_cache(maxsize=None)
def counterexample_run():
    """The 64^2 counterexample, with dt just under the CFL bound so that t = 1 is a sample."""
    cfg = builtin_counterexample(n=64)
    grid, *_ = build(cfg)
    every = cfg.flow.monitor_every
    k = every * int(np.ceil(1.0 / (every * cfl_bound(grid, cfg.flow.cfl_safety))))
    cfg = cfg.with_flow(dt=1.0 / k)
    x, y = grid.coords[..., 0], grid.coords[..., 1]
    errors = {}

    def compare(t, f):
        errors[t] = np.abs(f.values[..., 0] - (x - 0.5 * y**2 - t)).max()

    t0 = time.perf_counter()
    rep, _, trace = run_scenario(cfg, callback=compare)
    return rep, trace, errors, time.perf_counter() - t0


def test_criterion_4_counterexample(report):
    # oracle: L(x - y^2/2) = -1 symbolically for the inverse of the invariant metric
    X, Y = sp.symbols("x y", real=True)
    gamma = sp.Matrix([[1, -Y], [-Y, Y**2 + 1]])
    inv = gamma.inv()
    f = X - Y**2 / 2
    Lf = sp.simplify(sum(inv[a, b] * sp.diff(f, u, v) for a, u in enumerate((X, Y)) for b, v in enumerate((X, Y))))
    assert Lf == -1
    probe = np.array([[0.3, 0.7], [0.0, 0.0], [0.9, 0.1]])
    symbolic = [np.array(inv.subs({X: a, Y: b}), dtype=float) for a, b in probe]
    np.testing.assert_allclose(counterexample_inverse_metric(probe), symbolic, atol=1e-15)

    rep, trace, errors, elapsed = counterexample_run()
    t_one = min(errors, key=lambda t: abs(t - 1.0))
    err_one = errors[t_one]
    kin = trace.column("sup_kinetic")
    kin_dev = np.abs(kin - 1.0).max()
    t = trace.column("t")
    window = (t >= 0.5) & (t <= 2.0)
    rel_d = np.abs(trace.column("sup_dtilde")[window] / t[window] - 1.0).max()
    report(4, f"counterexample sup err at t={t_one:.6f} {err_one:.2e} (<= 5e-3), "
              f"|sup_kinetic-1| max {kin_dev:.2e} (<= 1e-6), sup_dtilde/t-1 max {rel_d:.2e} on [0.5, 2] (<= 2%), "
              f"outcome {rep.outcome.value}, {elapsed:.1f} s (< 120 s)")
    assert abs(t_one - 1.0) <= 1e-12
    assert err_one <= 5e-3
    assert kin_dev <= 1e-6
    assert window.sum() >= 2 and rel_d <= 0.02
    assert rep.outcome is Outcome.DIVERGED
    assert elapsed < 120


def random_flat_config(seed):
    return parse_config(f"""\
name = random_flat_{seed}
domain.shape = 32 32
target = circle
initial_map = band_limited({seed} 3 0.3)
flow.t_end = 0.3
flow.tol_residual = 1e-9
flow.monitor_every = 10
""")


def test_criterion_5_kinetic_monotonicity(report):
    t0 = time.perf_counter()
    runs = {}
    _, trace, _, ce_time = counterexample_run()
    runs["counterexample"] = trace
    for cfg in (builtin_flat_convergent(), builtin_dirichlet_hyperbolic()):
        runs[cfg.name] = run_scenario(cfg)[2]
    for seed in range(5):
        cfg = random_flat_config(seed)
        runs[cfg.name] = run_scenario(cfg)[2]
    elapsed = time.perf_counter() - t0 + ce_time
    bad = {name: tr.kinetic_violations() for name, tr in runs.items() if tr.kinetic_violations()}
    worst = max(
        (np.diff(tr.column("sup_kinetic")).max(initial=-np.inf) - tr.epsilon_mono) for tr in runs.values()
    )
    report(5, f"sup_kinetic nonincreasing within eps_mono on {len(runs)} flows, "
              f"max(increase - eps) {worst:.2e}, violations {bad or 'none'}, {elapsed:.1f} s (< 300 s)")
    assert not bad
    assert elapsed < 300


def test_criterion_6_flat_fourier_oracle(report):
    t0 = time.perf_counter()
    errs = {}
    for n in (64, 128):
        cfg = builtin_flat_convergent(n=n, t_end=0.5).with_flow(tol_residual=1e-300)
        grid, *_ = build(cfg)
        _, f, trace = run_scenario(cfg)
        assert trace.samples[-1].t == 0.5
        x, y = grid.coords[..., 0], grid.coords[..., 1]
        spectral = x + 0.1 * np.sin(2 * np.pi * x) * np.exp(-4 * np.pi**2 * 0.5)
        errs[n] = np.abs(f.values[..., 0] - spectral).max()
    elapsed = time.perf_counter() - t0
    ratio = errs[64] / errs[128]
    report(6, f"flat Fourier oracle err 64^2 {errs[64]:.2e} (<= 1e-3), 128^2 {errs[128]:.2e}, "
              f"ratio {ratio:.2f} (>= 3.5), {elapsed:.1f} s (< 180 s)")
    assert errs[64] <= 1e-3
    assert ratio >= 3.5
    assert elapsed < 180


def smooth_inverse_metric(coords):
    x, y = coords[..., 0], coords[..., 1]
    out = np.empty(coords.shape[:-1] + (2, 2))
    out[..., 0, 0] = 1.5 + 0.5 * np.cos(2 * np.pi * y)
    out[..., 1, 1] = 1.5 + 0.5 * np.sin(2 * np.pi * x)
    out[..., 0, 1] = out[..., 1, 0] = 0.3 * np.sin(2 * np.pi * (x - y))
    return out


def test_criterion_7_stencil_order(report):
    t0 = time.perf_counter()
    errs = []
    k = 2 * np.pi
    for n in (32, 64, 128):
        g = DomainGrid.from_function((n, n), inverse_metric=smooth_inverse_metric)
        x, y = g.coords[..., 0], g.coords[..., 1]
        u = np.exp(np.sin(k * x)) * np.cos(k * y)
        uxx = (k**2) * (np.cos(k * x) ** 2 - np.sin(k * x)) * u
        uyy = -(k**2) * u
        uxy = -k * np.cos(k * x) * np.exp(np.sin(k * x)) * k * np.sin(k * y)
        G = g.inverse_metric
        exact = G[..., 0, 0] * uxx + 2 * G[..., 0, 1] * uxy + G[..., 1, 1] * uyy
        errs.append(np.abs(affine_laplacian(g, u) - exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    elapsed = time.perf_counter() - t0
    report(7, f"stencil errors {', '.join(f'{e:.2e}' for e in errs)}, orders "
              f"{', '.join(f'{o:.3f}' for o in orders)} (>= 1.9), {elapsed:.2f} s (< 30 s)")
    assert np.all(orders >= 1.9)
    assert elapsed < 30


def test_criterion_8_dirichlet_convergence(report):
    t0 = time.perf_counter()
    min_v = []
    rep, f, trace = run_scenario(builtin_dirichlet_hyperbolic(), callback=lambda t, fm: min_v.append(fm.values[..., 1].min()))
    elapsed = time.perf_counter() - t0
    v_min = min(min_v)
    report(8, f"dirichlet_hyperbolic {rep.outcome.value}, sup_residual {rep.final_sup_residual:.2e} (<= 1e-6), "
              f"min v over samples {v_min:.3f} (> 0), {elapsed:.1f} s (< 180 s)")
    assert rep.outcome is Outcome.CONVERGED
    assert rep.final_sup_residual <= 1e-6
    assert v_min > 0
    assert elapsed < 180


def test_criterion_9_target_certification(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(109)
    flat_dev = hyp_dev = 0.0
    count = 0
    for chart in (make_euclidean(2), make_euclidean(3), make_flat_torus([1.0, 2.0])):
        for _ in range(20):
            X, Y = rng.normal(size=(2, chart.dim))
            flat_dev = max(flat_dev, abs(curvature_check_fd(chart, rng.normal(size=chart.dim), (X, Y))))
            count += 1
    H = make_hyperbolic_half_plane()
    for _ in range(20):
        y = np.array([rng.uniform(-3, 3), rng.uniform(0.2, 4)])
        X, Y = rng.normal(size=(2, 2))
        hyp_dev = max(hyp_dev, abs(curvature_check_fd(H, y, (X, Y)) + 1.0))
    elapsed = time.perf_counter() - t0
    report(9, f"flat |K| max {flat_dev:.2e} on {count} samples (<= 1e-6), half-plane |K+1| max {hyp_dev:.2e} "
              f"on 20 samples (<= 1e-4), {elapsed:.2f} s (< 5 s)")
    assert flat_dev <= 1e-6
    assert hyp_dev <= 1e-4
    assert elapsed < 5
