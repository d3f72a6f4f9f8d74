import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from lppgibbs.core import (GaussianLaw, RngStream, SampledPath, TimeGrid, affine_to_standard,
                           as_generator, bridge_fdd_density, brownian_bridge_batch,
                           brownian_motion_batch, conditional_tail_ratio, gaussian_tail_bounds,
                           log_conditional_tail_ratio,
                           pinned_conditional_gaussian, sample_brownian_bridge,
                           sample_brownian_motion)
from lppgibbs.errors import InvalidInput


# ---------------------------------------------------------------------------
# grids and paths

def test_grid_points_are_exact():
    g = TimeGrid(-2.0, 2.0, 16)
    assert g.h == 0.25
    assert np.array_equal(g.times, -2.0 + 0.25 * np.arange(17))
    assert g.index_of(0.5) == 10
    with pytest.raises(InvalidInput):
        g.index_of(0.1)


@pytest.mark.parametrize("a,b,steps", [(1.0, 1.0, 4), (2.0, 1.0, 4), (0.0, 1.0, 0), (0.0, 1.0, 1.5)])
def test_grid_rejects_bad_input(a, b, steps):
    with pytest.raises(InvalidInput):
        TimeGrid(a, b, steps)


def test_sampled_path_interpolates_linearly():
    p = SampledPath(TimeGrid(0.0, 2.0, 2), [0.0, 2.0, -2.0])
    assert p(0.5) == 1.0
    assert p(1.5) == 0.0
    with pytest.raises(InvalidInput):
        p(2.5)
    with pytest.raises(InvalidInput):
        SampledPath(TimeGrid(0.0, 1.0, 2), [0.0, np.nan, 1.0])


# ---------------------------------------------------------------------------
# random streams

def test_stream_is_pure_function_of_seed_and_index():
    a = RngStream(123, 7).generator.standard_normal(50)
    b = RngStream(123, 7).generator.standard_normal(50)
    c = RngStream(123, 8).generator.standard_normal(50)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_distinct_streams_are_uncorrelated():
    x = RngStream(5, 0).generator.standard_normal(200_000)
    y = RngStream(5, 1).generator.standard_normal(200_000)
    # correlation of independent samples has sd 1/sqrt(n)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(x.size)


def test_child_indices_are_distinct():
    root = RngStream(1, 0)
    idx = {root.child(i).stream_index for i in range(200)}
    idx |= {root.child(3).child(i).stream_index for i in range(200)}
    assert len(idx) == 400


def test_stream_rejects_bad_seed():
    with pytest.raises(InvalidInput):
        RngStream(-1)
    with pytest.raises(InvalidInput):
        RngStream(2**64)
    with pytest.raises(InvalidInput):
        as_generator(None)


# ---------------------------------------------------------------------------
# Brownian motion and bridge

def test_motion_starts_at_start():
    p = sample_brownian_motion(TimeGrid(0.0, 3.0, 7), 1.25, RngStream(0))
    assert p.values[0] == 1.25


def test_motion_endpoint_variance():
    gen = RngStream(11).generator
    w = brownian_motion_batch(TimeGrid(0.0, 1.0, 100), 0.0, 100_000, gen)
    end = w[:, -1]
    var = end.var(ddof=1)
    se = np.sqrt(2.0 / (end.size - 1))      # sd of the sample variance of N(0, 1)
    assert abs(var - 1.0) < 3 * se


def test_motion_single_step_law():
    gen = RngStream(12).generator
    w = brownian_motion_batch(TimeGrid(1.0, 3.5, 1), 0.0, 50_000, gen)
    assert stats.kstest(w[:, -1], "norm", args=(0, np.sqrt(2.5))).pvalue > 1e-3


def test_motion_increments_are_independent():
    gen = RngStream(13).generator
    w = brownian_motion_batch(TimeGrid(0.0, 1.0, 4), 0.0, 100_000, gen)
    inc = np.diff(w, axis=1)
    cov = np.cov(inc.T)
    assert np.allclose(cov, 0.25 * np.eye(4), atol=5e-3)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-50, 50), y=st.floats(-50, 50), steps=st.integers(1, 40),
       seed=st.integers(0, 2**32))
def test_bridge_endpoints_bit_exact(x, y, steps, seed):
    p = sample_brownian_bridge(TimeGrid(-1.0, 1.0, steps), x, y, RngStream(seed))
    assert p.values[0] == x
    assert p.values[-1] == y


def test_bridge_midpoint_law():
    gen = RngStream(14).generator
    grid = TimeGrid(-1.0, 1.0, 8)
    x, y = 0.7, -1.9
    v = brownian_bridge_batch(grid, x, y, 100_000, gen)[:, 4]
    se_m = np.sqrt(0.5 / v.size)
    se_v = 0.5 * np.sqrt(2.0 / (v.size - 1))
    assert abs(v.mean() - (x + y) / 2) < 3 * se_m
    assert abs(v.var(ddof=1) - 0.5) < 3 * se_v


def test_standard_bridge_half_time_variance():
    gen = RngStream(15).generator
    v = brownian_bridge_batch(TimeGrid(0.0, 1.0, 10), 0.0, 0.0, 100_000, gen)[:, 5]
    assert abs(v.var(ddof=1) - 0.25) < 3 * 0.25 * np.sqrt(2.0 / v.size)


def test_bridge_covariance_matches_min_formula():
    # Cov(B_s, B_t) = s(1-t) for s <= t on [0, 1]
    gen = RngStream(16).generator
    grid = TimeGrid(0.0, 1.0, 4)
    v = brownian_bridge_batch(grid, 0.0, 0.0, 200_000, gen)[:, 1:-1]
    t = grid.times[1:-1]
    exact = np.minimum.outer(t, t) * (1 - np.maximum.outer(t, t))
    assert np.allclose(np.cov(v.T), exact, atol=4e-3)


def test_shifted_bridge_mean_is_constant():
    gen = RngStream(17).generator
    v = brownian_bridge_batch(TimeGrid(0.0, 1.0, 10), 3.0, 3.0, 50_000, gen)
    se = np.sqrt(0.25 / 50_000)
    assert np.all(np.abs(v.mean(axis=0) - 3.0) < 4 * se + 1e-12)


# ---------------------------------------------------------------------------
# affine standardisation

def test_affine_to_standard_arithmetic():
    p = SampledPath(TimeGrid(0.0, 2.0, 2), [1.0, 5.0, 3.0])
    assert np.array_equal(affine_to_standard(p).values, [0.0, 3.0, 0.0])


def test_affine_input_maps_to_zero():
    g = TimeGrid(-1.0, 3.0, 8)
    p = SampledPath(g, 2.5 - 0.75 * g.times)
    assert np.allclose(affine_to_standard(p).values, 0.0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=20))
def test_affine_to_standard_properties(vals):
    g = TimeGrid(0.0, 1.0, len(vals) - 1)
    p = SampledPath(g, vals)
    out = affine_to_standard(p).values
    assert out[0] == 0.0 and out[-1] == 0.0
    diff = p.values - out
    # difference is affine: constant second differences equal to zero
    assert np.allclose(np.diff(diff, 2), 0.0, atol=1e-9)
    # vanishing endpoints: idempotent
    assert np.allclose(affine_to_standard(SampledPath(g, out)).values, out, atol=1e-12)


# ---------------------------------------------------------------------------
# pinned conditional Gaussian

def test_pinned_gaussian_k1_example():
    law = pinned_conditional_gaussian(0.0, 1.0, 2.0, 3.0, 0.0, 0.0)
    assert law.m == 0.0 and law.var == 0.5


def test_pinned_gaussian_k1_mean_formula():
    law = pinned_conditional_gaussian(0.0, 1.0, 2.0, 4.0, 3.0, 0.5)
    var = 1.0 / (1.0 / 1.0 + 1.0 / 2.0)
    assert law.var == pytest.approx(var, rel=1e-15)
    assert law.m == pytest.approx((3.0 - 0.5) / 2.0 * var, rel=1e-14)


@pytest.mark.parametrize("args", [(0.0, 0.0, 1.0, 2.0), (0.0, 1.0, 2.0, 2.0), (0.0, 2.0, 1.0, 3.0)])
def test_pinned_gaussian_degenerate(args):
    with pytest.raises(InvalidInput):
        pinned_conditional_gaussian(*args, 0.0, 0.0)


def test_pinned_gaussian_symmetric_data():
    law = pinned_conditional_gaussian(-2.0, -0.5, 0.5, 2.0, [1.0, 1.0], [1.0, 1.0], k=2, r=[0.3, 0.3])
    assert law.m == pytest.approx(0.0, abs=1e-15)


def _conditioning_problem(l1, a, b, l2, k, y, z):
    """Joint law of (B_i(a), B_i(b))_i for independent bridges y_i -> z_i on [l1, l2]."""
    t = np.array([a, b])
    cov1 = (np.minimum.outer(t, t) - l1) * (l2 - np.maximum.outer(t, t)) / (l2 - l1)
    mean = np.concatenate([y[i] + (t - l1) / (l2 - l1) * (z[i] - y[i]) for i in range(k)])
    cov = np.kron(np.eye(k), cov1)
    # constraints: B_i(b) - B_i(a) = j_i; B_i(a) - B_k(a) = r_i - r_k (i < k)
    rows = []
    for i in range(k):
        e = np.zeros(2 * k)
        e[2 * i], e[2 * i + 1] = -1.0, 1.0
        rows.append(e)
    for i in range(k - 1):
        e = np.zeros(2 * k)
        e[2 * i], e[2 * (k - 1)] = 1.0, -1.0
        rows.append(e)
    A = np.array(rows)
    target = np.zeros(2 * k)
    target[2 * (k - 1)] = 1.0          # lowest curve at a
    return mean, cov, A, target


def test_pinned_gaussian_matches_schur_complement():
    l1, a, b, l2, k = -1.5, -0.2, 0.4, 2.0, 3
    y = np.array([1.0, 0.2, -0.5])
    z = np.array([2.0, 0.4, -1.0])
    j = np.array([0.3, -0.1, 0.25])
    r = np.array([1.2, 0.5, 0.0])
    mean, cov, A, tvec = _conditioning_problem(l1, a, b, l2, k, y, z)
    c = np.concatenate([j, r[:-1] - r[-1]])
    S = A @ cov @ A.T
    g = tvec @ cov @ A.T
    m_exact = tvec @ mean + g @ np.linalg.solve(S, c - A @ mean)
    v_exact = tvec @ cov @ tvec - g @ np.linalg.solve(S, g)
    law = pinned_conditional_gaussian(l1, a, b, l2, z, j, k=k, r=r, y=y)
    assert law.m == pytest.approx(m_exact, rel=1e-12, abs=1e-12)
    assert law.var == pytest.approx(v_exact, rel=1e-12)


def test_pinned_gaussian_matches_simulated_regression():
    # X - E[X | C] is independent of C for Gaussians, so a least-squares fit of
    # simulated X on simulated C recovers the conditional mean and variance
    l1, a, b, l2, k = 0.0, 1.0, 2.0, 3.0, 2
    y = np.array([0.5, -0.5])
    z = np.array([1.0, 0.0])
    j = np.array([0.4, -0.2])
    r = np.array([0.8, 0.0])
    grid = TimeGrid(l1, l2, 3)
    gen = RngStream(21).generator
    N = 100_000
    B = np.stack([brownian_bridge_batch(grid, y[i], z[i], N, gen) for i in range(k)], axis=1)
    Ba, Bb = B[:, :, 1], B[:, :, 2]
    C = np.column_stack([Bb - Ba, Ba[:, :-1] - Ba[:, -1:]])
    X = Ba[:, -1]
    D = np.column_stack([np.ones(N), C])
    coef, *_ = np.linalg.lstsq(D, X, rcond=None)
    resid = X - D @ coef
    m_emp = coef @ np.concatenate([[1.0], j, r[:-1] - r[-1]])
    v_emp = resid.var(ddof=D.shape[1])
    law = pinned_conditional_gaussian(l1, a, b, l2, z, j, k=k, r=r, y=y)
    # standard error of the prediction at the target point and of the variance
    cov_coef = v_emp * np.linalg.inv(D.T @ D)
    x0 = np.concatenate([[1.0], j, r[:-1] - r[-1]])
    se_m = np.sqrt(x0 @ cov_coef @ x0)
    se_v = v_emp * np.sqrt(2.0 / N)
    assert abs(m_emp - law.m) < 3 * se_m
    assert abs(v_emp - law.var) < 3 * se_v


# ---------------------------------------------------------------------------
# bridge densities

def test_fdd_density_standard_half():
    d = bridge_fdd_density(0.0, 0.0, 0.0, 1.0, [0.5], [0.0])
    assert d == pytest.approx(np.sqrt(2.0 / np.pi), rel=1e-14)
    assert d == pytest.approx(0.79788456080286541, rel=1e-14)


def test_fdd_density_empty_and_errors():
    assert bridge_fdd_density(1.0, 2.0, 0.0, 1.0, [], []) == 1.0
    with pytest.raises(InvalidInput):
        bridge_fdd_density(0.0, 0.0, 0.0, 1.0, [0.6, 0.3], [0.0, 0.0])
    with pytest.raises(InvalidInput):
        bridge_fdd_density(0.0, 0.0, 0.0, 1.0, [1.0], [0.0])


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-3, 3), t=st.floats(0.05, 0.95), z=st.floats(-4, 4))
def test_fdd_density_one_point_matches_marginal(x, y, t, z):
    a, b = -1.0, 2.0
    s = a + t * (b - a)
    m = x + (s - a) / (b - a) * (y - x)
    var = (s - a) * (b - s) / (b - a)
    d = bridge_fdd_density(x, y, a, b, [s], [z])
    assert d == pytest.approx(stats.norm.pdf(z, m, np.sqrt(var)), rel=1e-12)


def test_fdd_density_two_points_matches_gaussian_and_integrates():
    x, y, a, b = 0.3, -0.8, 0.0, 2.0
    t = np.array([0.5, 1.4])
    mean = x + (t - a) / (b - a) * (y - x)
    cov = (np.minimum.outer(t, t) - a) * (b - np.maximum.outer(t, t)) / (b - a)
    mvn = stats.multivariate_normal(mean, cov)
    for z in ([0.0, 0.0], [1.0, -2.0], [-0.4, 0.9]):
        assert bridge_fdd_density(x, y, a, b, t, z) == pytest.approx(mvn.pdf(z), rel=1e-10)
    total, _ = integrate.dblquad(lambda z2, z1: bridge_fdd_density(x, y, a, b, t, [z1, z2]),
                                 -8, 8, -8, 8)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_fdd_density_two_points_against_sampler_histogram():
    x, y = 0.0, 0.0
    grid = TimeGrid(0.0, 1.0, 4)
    gen = RngStream(22).generator
    v = brownian_bridge_batch(grid, x, y, 400_000, gen)[:, [1, 3]]
    box = 0.1
    for c in ([0.0, 0.0], [0.3, -0.2], [-0.3, -0.3]):
        inside = np.all(np.abs(v - c) < box / 2, axis=1)
        p_emp = inside.mean()
        p_exact = bridge_fdd_density(x, y, 0.0, 1.0, [0.25, 0.75], c) * box * box
        se = np.sqrt(p_exact * (1 - p_exact) / v.shape[0])
        # box-averaging bias is second order in the box width
        assert abs(p_emp - p_exact) < 4 * se + 0.02 * p_exact


# ---------------------------------------------------------------------------
# Gaussian tails

def test_tail_bounds_at_one():
    lo, up = gaussian_tail_bounds(1.0)
    c = 1 / np.sqrt(2 * np.pi)
    assert lo == pytest.approx(c * 0.5 * np.exp(-0.5), rel=1e-15)
    assert up == pytest.approx(c * np.exp(-0.5), rel=1e-15)


def test_tail_bounds_vanish_and_lower_only_above_one():
    lo, up = gaussian_tail_bounds(20.0)
    assert 0 < lo < up < 1e-80
    lo, up = gaussian_tail_bounds(40.0)
    assert up < 1e-300 and lo <= up
    assert gaussian_tail_bounds(0.5)[0] is None
    with pytest.raises(InvalidInput):
        gaussian_tail_bounds(-0.1)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 30.0))
def test_tail_bounds_bracket_exact_tail(t):
    lo, up = gaussian_tail_bounds(t)
    sf = stats.norm.sf(t)
    assert lo <= sf <= up


def test_tail_bounds_bracket_monte_carlo():
    gen = RngStream(23).generator
    x = gen.standard_normal(1_000_000)
    p = np.mean(x > 2.0)
    lo, up = gaussian_tail_bounds(2.0)
    se = np.sqrt(p * (1 - p) / x.size)
    assert lo - 3 * se <= p <= up + 3 * se


def test_conditional_tail_ratio_strictly_decreasing():
    s = np.linspace(-5, 10, 301)
    for law in (GaussianLaw(0.0, 1.0), GaussianLaw(1.5, 0.3)):
        for r in (0.1, 1.0, 3.0):
            q = log_conditional_tail_ratio(s, r, law)
            assert np.all(np.diff(q) < 0)
            assert np.all(q < 0)
    # the plain ratio is strictly decreasing wherever it is distinguishable from 1
    q = conditional_tail_ratio(np.linspace(-3, 10, 200), 0.5)
    assert np.all(np.diff(q) < 0)


def test_gaussian_law_validation():
    with pytest.raises(InvalidInput):
        GaussianLaw(0.0, -1.0)
    assert GaussianLaw(1.0, 4.0).sd == 2.0
