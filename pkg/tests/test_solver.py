"""Solver tests: unscattered term, scattering sweep, Neumann summation,
certificates, traces, and residuals."""

import numpy as np
import pytest

from raybound.boundary import BoundarySource
from raybound.errors import IterationBudgetExceeded, NotContractive, NotOutgoing
from raybound.geometry import (
    Ball,
    CircleInterface,
    CutInterface,
    Disk,
    SubdomainPartition,
    boundary_quadrature,
    sample_interior,
)
from raybound.media import MediumModel
from raybound.solver import (
    HAVE_NUMBA,
    DirectionSet,
    GridSpec,
    ScatteringSweep,
    ballistic_term,
    estimate_contraction,
    neumann_step,
    residual_check,
    scattering_source,
    solve,
    trace_on_gamma_plus,
)


@pytest.fixture
def disk():
    return Disk()


def small_setup(disk, mu_s=0.5, h=1.0 / 16, n_dirs=16, mu_t=(1.0,), part=None):
    part = part if part is not None else SubdomainPartition()
    med = MediumModel(list(mu_t), [mu_s] * len(mu_t))
    grid = GridSpec.cover(disk, h)
    dirs = DirectionSet.uniform_circle(n_dirs)
    return part, med, grid, dirs


def test_direction_set_exactness():
    # equal weights |S^(d-1)|/n by construction; sums exact to roundoff
    ds = DirectionSet.uniform_circle(48)
    assert ds.weights.sum() == pytest.approx(2.0 * np.pi, rel=1e-15)
    assert np.all(ds.weights == 2.0 * np.pi / 48)
    fib = DirectionSet.fibonacci(100)
    assert fib.weights.sum() == pytest.approx(4.0 * np.pi, rel=1e-15)
    assert np.all(fib.weights == 4.0 * np.pi / 100)


def test_grid_cover_unit_disk(disk):
    grid = GridSpec.cover(disk, 1.0 / 16)
    assert grid.npts == (33, 33)
    np.testing.assert_allclose(grid.origin, [-1.0, -1.0])
    axes = grid.axes()
    assert 0.0 in axes[0] and 1.0 in axes[0]


def test_ballistic_homogeneous_center(disk):
    part, med, _, _ = small_setup(disk, mu_s=0.0)
    src = BoundarySource.constant(disk, 1.0)
    v = ballistic_term(disk, part, med, src, (0.0, 0.0), (1.0, 0.0))
    assert v == pytest.approx(np.exp(-1.0), rel=1e-12)


def test_ballistic_two_level_sides(disk):
    part, med, _, _ = small_setup(disk, mu_s=0.0)
    src = BoundarySource.piecewise_ab(disk, 1.0, (-np.pi / 2, np.pi / 2))
    # backtrace to (0, 1) lands on gamma, which radiates
    v = ballistic_term(disk, part, med, src, (0.0, 0.0), (0.0, -1.0))
    assert v == pytest.approx(np.exp(-1.0), rel=1e-12)
    # backtrace to (-1, 0) lands strictly in the dark half
    v = ballistic_term(disk, part, med, src, (0.0, 0.0), (1.0, 0.0))
    assert v == 0.0


def test_solve_pure_absorber_is_exact_everywhere(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.0)
    src = BoundarySource.constant(disk, 1.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs)
    assert f.cert.n_terms == 0
    assert f.cert.tail_bound == 0.0
    assert np.all(f.collided_grid == 0.0)
    rng = np.random.default_rng(0)
    pts = sample_interior(disk, 200, rng)
    ang = rng.uniform(0, 2 * np.pi, 200)
    for p, a in zip(pts, ang):
        xi = np.array([np.cos(a), np.sin(a)])
        expect = np.exp(-float(disk.tau_many(p, xi, -1)))
        assert f.eval(p, xi) == pytest.approx(expect, abs=1e-12)


def test_solve_zero_inflow_gives_zero_field(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.5)
    src = BoundarySource.constant(disk, 0.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs)
    assert np.all(f.total_grid == 0.0)
    assert f.cert.n_terms == 0


def test_scattering_source_constant_field(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.5)
    src = BoundarySource.constant(disk, 1.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs, tol=0.5)
    ones = np.ones_like(f.total_grid)
    c = scattering_source(f, med, (0.0, 0.0), (1.0, 0.0), values=3.7 * ones)
    assert c == pytest.approx(3.7, rel=1e-14)  # normalization is exact
    zeros = np.zeros_like(f.total_grid)
    assert scattering_source(f, med, (0.0, 0.0), (1.0, 0.0), values=zeros) == 0.0


def test_scattering_source_of_unscattered_term_at_center(disk):
    # radial symmetry at the center: source of term 0 equals exp(-1)
    part, med, grid, dirs = small_setup(disk, mu_s=0.5)
    src = BoundarySource.constant(disk, 1.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs, tol=0.5)
    g = scattering_source(f, med, (0.0, 0.0), (1.0, 0.0), values=f.uncollided_grid)
    assert g == pytest.approx(np.exp(-1.0), rel=1e-12)


def test_scattering_source_requires_grid_node(disk):
    part, med, grid, dirs = small_setup(disk)
    src = BoundarySource.constant(disk, 1.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs, tol=0.5)
    with pytest.raises(ValueError):
        scattering_source(f, med, (0.01234, 0.0), (1.0, 0.0))


def test_neumann_step_vanishes_without_scattering(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.0)
    prev = np.ones(tuple(grid.npts) + (dirs.n,))
    nxt, sup = neumann_step(disk, part, med, grid, dirs, prev)
    assert sup == 0.0
    assert np.all(nxt == 0.0)


@pytest.mark.parametrize(
    "part",
    [
        SubdomainPartition(),
        # 0.53 keeps the interface off grid lines so neither path meets a
        # tangent ray (tangencies subdivide the quadrature differently)
        SubdomainPartition([CircleInterface(0.53)]),
        SubdomainPartition([CutInterface((1.0, 0.0), 0.1)]),
    ],
    ids=["empty", "circle", "cut"],
)
def test_fast_and_generic_sweeps_agree(disk, part):
    if not HAVE_NUMBA:
        pytest.skip("no compiled path available")
    n_regions = part.n_regions
    med = MediumModel([1.0] * n_regions, [0.5] * n_regions)
    if n_regions > 1:
        med = MediumModel(
            [1.0, 2.0][:n_regions], [0.5, 0.75][:n_regions]
        )
    grid = GridSpec.cover(disk, 1.0 / 16)
    dirs = DirectionSet.uniform_circle(16)
    src = BoundarySource.constant(disk, 1.0)
    inside = grid.inside_mask(disk)
    nodes = grid.nodes()[inside]
    f0 = np.zeros(tuple(grid.npts) + (dirs.n,))
    for k in range(dirs.n):
        f0[..., k][inside] = ballistic_term(disk, part, med, src, nodes, dirs.vectors[k])
    fast = ScatteringSweep(disk, part, med, grid, dirs, use_fast=True).step(f0)
    slow = ScatteringSweep(disk, part, med, grid, dirs, use_fast=False).step(f0)
    np.testing.assert_allclose(fast, slow, atol=1e-13)


def test_sweep_thread_count_invariance(disk):
    if not HAVE_NUMBA:
        pytest.skip("no compiled path available")
    import numba

    part, med, grid, dirs = small_setup(disk)
    src = BoundarySource.constant(disk, 1.0)
    inside = grid.inside_mask(disk)
    nodes = grid.nodes()[inside]
    f0 = np.zeros(tuple(grid.npts) + (dirs.n,))
    for k in range(dirs.n):
        f0[..., k][inside] = ballistic_term(disk, part, med, src, nodes, dirs.vectors[k])
    sweep = ScatteringSweep(disk, part, med, grid, dirs, use_fast=True)
    old = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        one = sweep.step(f0)
        numba.set_num_threads(2)
        two = sweep.step(f0)
    finally:
        numba.set_num_threads(old)
    # disjoint writes per node: bitwise identical across thread counts
    assert np.array_equal(one, two)


def test_contraction_estimate_homogeneous(disk):
    part, med, _, _ = small_setup(disk, mu_s=0.5)
    m_sampled, m_cert = estimate_contraction(disk, part, med)
    assert m_sampled == pytest.approx(1.0 - np.exp(-2.0), abs=2e-3)
    assert m_cert > m_sampled
    assert m_cert == pytest.approx(1.0 - np.exp(-2.1), abs=3e-3)


def test_solve_benchmark_certificate(bench64):
    cert = bench64.cert
    assert cert.m < 1.0
    assert cert.tail_bound <= 1e-6
    # n_terms is the smallest N satisfying the a-priori geometric bound
    m, s0 = cert.m, cert.sup_f0
    assert s0 * m ** (cert.n_terms + 1) / (1 - m) <= 1e-6
    if cert.n_terms > 0:
        assert s0 * m**cert.n_terms / (1 - m) > 1e-6
    # per-step contraction inequality, re-checked from the recorded sups
    for s_prev, s_next in zip(bench64.term_sups, bench64.term_sups[1:]):
        assert s_next <= cert.m * s_prev + 1e-14
    # uniform bound and positivity
    assert np.max(np.abs(bench64.total_grid)) <= s0 / (1 - cert.m)
    assert np.min(bench64.total_grid) >= -1e-13
    assert bench64.check_split_identity() <= 1e-12


def test_inflow_data_recovered_exactly(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.5)
    src = BoundarySource.piecewise_ab(disk, 2.0, (-np.pi / 2, np.pi / 2))
    f = solve(disk, part, med, src, grid=grid, directions=dirs, tol=1e-3)
    for bp, _ in boundary_quadrature(disk, 32):
        for k in range(dirs.n):
            xi = dirs.vectors[k]
            if float(bp.normal @ xi) < -1e-9:
                expect = src.eval_many(bp.position)
                assert f.eval(bp.position, xi) == pytest.approx(expect, abs=1e-14)


def test_trace_pure_absorber_diameter(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.0)
    src = BoundarySource.constant(disk, 1.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs)
    got = trace_on_gamma_plus(f, (0.0, 1.0), (0.0, 1.0))
    assert got == pytest.approx(np.exp(-2.0), rel=1e-12)
    with pytest.raises(NotOutgoing):
        trace_on_gamma_plus(f, (0.0, 1.0), (0.0, -1.0))


def test_trace_zero_inflow(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.5)
    src = BoundarySource.constant(disk, 0.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs)
    assert trace_on_gamma_plus(f, (0.0, 1.0), (0.0, 1.0)) == 0.0


def test_trace_scattering_adds_to_ballistic(bench64):
    rng = np.random.default_rng(9)
    for _ in range(20):
        ang = rng.uniform(0, 2 * np.pi)
        y = np.array([np.cos(ang), np.sin(ang)])
        got = bench64.trace(y, y)  # radial exit
        assert got >= np.exp(-2.0) - 1e-12


def test_residual_pure_absorber_tiny(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.0)
    src = BoundarySource.constant(disk, 1.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs)
    rep = residual_check(f, n_samples=50, rng=3)
    assert rep.integral_max <= 1e-9


def test_residual_differential_second_order(disk):
    # centered difference along the characteristic converges at order 2
    # for the purely absorbing field (evaluation is exact there)
    part, med, grid, dirs = small_setup(disk, mu_s=0.0)
    src = BoundarySource.constant(disk, 1.0)
    f = solve(disk, part, med, src, grid=grid, directions=dirs)
    coarse = residual_check(f, n_samples=40, rng=5, dt=0.02).differential_max
    fine = residual_check(f, n_samples=40, rng=5, dt=0.01).differential_max
    assert coarse / fine == pytest.approx(4.0, rel=0.2)


def test_residual_scattering_benchmark(bench64):
    rep = residual_check(bench64, n_samples=50, rng=7)
    assert rep.integral_max <= 5e-3


def test_not_contractive_raises(disk):
    part = SubdomainPartition()
    med = MediumModel([8.0], [0.5])
    src = BoundarySource.constant(disk, 1.0)
    with pytest.raises(NotContractive):
        solve(disk, part, med, src,
              grid=GridSpec.cover(disk, 0.25),
              directions=DirectionSet.uniform_circle(8))


def test_iteration_budget_exceeded(disk):
    part, med, grid, dirs = small_setup(disk, mu_s=0.5)
    src = BoundarySource.constant(disk, 1.0)
    with pytest.raises(IterationBudgetExceeded):
        solve(disk, part, med, src, grid=grid, directions=dirs, tol=1e-9, max_terms=3)


def test_scattering_needs_grid(disk):
    part, med, _, _ = small_setup(disk, mu_s=0.5)
    src = BoundarySource.constant(disk, 1.0)
    with pytest.raises(ValueError):
        solve(disk, part, med, src)


def test_eval_between_set_directions(bench64):
    # direction interpolation stays between neighboring set values
    x = np.array([0.2, -0.1])
    k = 5
    step = 2 * np.pi / 64
    mid = (k + 0.5) * step
    xi = np.array([np.cos(mid), np.sin(mid)])
    v = bench64.eval(x, xi)
    v0 = bench64.eval(x, bench64.directions.vectors[k], k=k)
    v1 = bench64.eval(x, bench64.directions.vectors[k + 1], k=k + 1)
    lo, hi = min(v0, v1), max(v0, v1)
    assert lo - 5e-3 <= v <= hi + 5e-3


def test_ball_pure_absorber():
    ball = Ball()
    part = SubdomainPartition()
    med = MediumModel([1.0], [0.0], dim=3)
    src = BoundarySource.constant(ball, 1.0)
    f = solve(ball, part, med, src,
              grid=GridSpec.cover(ball, 1.0 / 6),
              directions=DirectionSet.fibonacci(48),
              contraction_net=(16, 32))
    rng = np.random.default_rng(1)
    pts = sample_interior(ball, 50, rng)
    for p in pts:
        xi = rng.normal(size=3)
        xi /= np.linalg.norm(xi)
        expect = np.exp(-float(ball.tau_many(p, xi, -1)))
        assert f.eval(p, xi) == pytest.approx(expect, abs=1e-10)


def test_ball_scattering_smoke():
    ball = Ball()
    part = SubdomainPartition()
    med = MediumModel([0.5], [0.25], dim=3)
    src = BoundarySource.constant(ball, 1.0)
    f = solve(ball, part, med, src,
              grid=GridSpec.cover(ball, 1.0 / 6),
              directions=DirectionSet.fibonacci(48),
              tol=0.3, contraction_net=(12, 24))
    assert f.cert.n_terms >= 1
    assert f.check_split_identity() <= 1e-12
    v = f.trace((0.0, 0.0, 1.0), (0.0, 0.0, 1.0))
    assert v >= np.exp(-1.0) - 1e-12  # ballistic floor for the diameter


def test_kept_terms_recorded(bench64):
    assert len(bench64.kept_terms) == 2
    assert len(bench64.term_sups) == bench64.cert.n_terms + 1
    # term sups decay geometrically from the start
    assert bench64.term_sups[1] < bench64.term_sups[0]
