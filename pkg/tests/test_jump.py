import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lppgibbs.core import RngStream, SampledPath, TimeGrid
from lppgibbs.errors import FavFailure, InvalidInput
from lppgibbs.jump import (ConcaveMajorant, CornerVectors, EpsilonValidityWarning, SideData,
                           TestOutcome, big_c, build_context, build_pole_set, check_fav,
                           corner_vectors, decompose, eps_for_scale, epsilon_violations,
                           jump_scale, least_concave_majorant, little_c, min_D,
                           naive_conditioned_candidates, random_context, reconstruct,
                           regularity_constants, run_candidate_tests, sample_jump_ensemble,
                           sample_jump_ensemble_batch, sample_wiener_candidate,
                           sample_wiener_candidate_batch, select_lr, side_no_touch)

SQ2 = np.sqrt(2.0)


def _quiet(fn, *a, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EpsilonValidityWarning)
        return fn(*a, **kw)


def _fixed_context():
    """Two curves over a wavy floor on [-2, 2] (T = 1)."""
    grid = TimeGrid(-2.0, 2.0, 32)
    t = grid.times
    fl = -1.2 + 0.2 * np.sin(3 * t)
    top = np.array([1.0 + 0.3 * np.cos(t), 0.1 * np.sin(2 * t)])
    return _quiet(build_context, 2, 1.0, grid, top, fl)


# ---------------------------------------------------------------------------
# constants

def test_little_c_values():
    assert little_c(1, 0.1) == 2**-2.5 * 0.1
    assert little_c(1, 1.0) == 0.125
    assert little_c(1, 10.0) == 0.125
    ratio = (3 - 2**1.5) ** 1.5 * 10**-1.5
    for k in range(2, 8):
        assert little_c(k, 0.7) / little_c(k - 1, 0.7) == pytest.approx(ratio, rel=1e-13)


def test_big_c_and_D():
    assert big_c(1, 1.0, 3.0) == 3.0
    a = 10 * 20 * 5 ** 1.0 * (10 / (3 - 2**1.5)) * 2.0
    assert big_c(2, 1.0, 2.0) == pytest.approx(max(a, np.exp(0.5)), rel=1e-13)
    for c in (0.01, 1.0, 100.0):
        D2 = min_D(2, c)
        assert D2 >= 108.0
        assert D2 == max(little_c(2, c) ** (-1 / 3) * (2**-4.5 - 2**-5) ** (-1 / 3), 108.0)
    rc = regularity_constants(3, 1.0, 1.0)
    assert rc.D_k == min_D(3, 1.0) and rc.c_k == little_c(3, 1.0) and rc.C_k == big_c(3, 1.0, 1.0)
    assert regularity_constants(2, 1.0, 1.0, D_k=1e4).D_k == 1e4
    with pytest.raises(InvalidInput):
        regularity_constants(2, 1.0, 1.0, D_k=100.0)
    with pytest.raises(InvalidInput):
        regularity_constants(2, -1.0, 1.0)


def test_jump_scale_roundtrip_and_eps_checks():
    D = 200.0
    assert jump_scale(D, eps_for_scale(D, 3.0)) == pytest.approx(3.0, rel=1e-9)
    assert jump_scale(D, np.exp(-8.0)) == pytest.approx(400.0)
    with pytest.raises(InvalidInput):
        jump_scale(D, 1.0)
    rc = regularity_constants(2, 1.0, 1.0)
    assert len(epsilon_violations(rc, 0.1, 1.0)) == 2
    # the second bound sits at exp(-2e7 k^{3/2} d_ip^6) and underflows
    assert epsilon_violations(rc, 1e-300, 1.0) == ["eps < exp(-2e7 k^{3/2} d_ip^6)"]


# ---------------------------------------------------------------------------
# concave majorant

def _hull_brute(t, f):
    """Value of the least concave majorant at every gridpoint from all chords."""
    m = len(t)
    out = f.copy()
    for i in range(m):
        for j in range(i + 1, m):
            for s in range(i, j + 1):
                w = (t[s] - t[i]) / (t[j] - t[i])
                out[s] = max(out[s], (1 - w) * f[i] + w * f[j])
    return out


def test_majorant_of_concave_input_is_input():
    g = TimeGrid(-1.0, 1.0, 16)
    f = -g.times**2
    maj = least_concave_majorant(SampledPath(g, f))
    assert np.allclose(maj(g.times), f, atol=1e-15)


def test_majorant_of_v_shape_is_chord():
    g = TimeGrid(-1.0, 1.0, 10)
    maj = least_concave_majorant(SampledPath(g, np.abs(g.times)))
    assert np.array_equal(maj.x, [-1.0, 1.0])
    assert np.allclose(maj(g.times), 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=20, max_size=20))
def test_majorant_matches_brute_force(vals):
    g = TimeGrid(-2.0, 2.0, 19)
    f = np.array(vals)
    maj = least_concave_majorant(SampledPath(g, f))
    assert np.allclose(maj(g.times), _hull_brute(g.times, f), atol=1e-9)
    # dominance, contact at breakpoints and concavity
    assert np.all(maj(g.times) >= f - 1e-12)
    idx = [g.index_of(x) for x in maj.x]
    assert np.allclose(maj.y, f[idx])
    assert np.all(np.diff(maj.slopes) < 0)


# ---------------------------------------------------------------------------
# (l, r)

def test_select_lr_cases():
    T = 1.0
    maj = ConcaveMajorant(np.array([-1.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0]))
    lr = select_lr(maj, T)
    assert (lr.l, lr.r) == (-1.0, 1.0) and not lr.degenerate
    steep = ConcaveMajorant(np.array([-1.0, -0.5, 1.0]), np.array([-5.0, 0.0, -0.1]))
    assert select_lr(steep, T).l == -0.5
    up = ConcaveMajorant(np.array([-1.0, 0.0, 1.0]), np.array([-20.0, -10.0, -4.5]))
    lr = select_lr(up, T)
    assert lr.l == T and lr.l_empty and lr.degenerate
    down = ConcaveMajorant(np.array([-1.0, 0.0, 1.0]), np.array([0.0, -5.0, -15.0]))
    lr = select_lr(down, T)
    assert lr.r == -T and lr.r_empty and lr.degenerate


# ---------------------------------------------------------------------------
# pole set

def _maj(x):
    x = np.asarray(x, dtype=float)
    return ConcaveMajorant(x, -(x - x.mean()) ** 2)


def _poles_brute(e, d):
    """Largest admissible subset, lexicographically maximal among those."""
    inner = e[1:-1]
    best = None
    for r in range(len(inner) + 1):
        for sub in itertools.combinations(inner, r):
            P = np.concatenate([[e[0]], sub, [e[-1]]])
            if not np.all(np.diff(P) > d):
                continue
            if not all(np.min(np.abs(P - x)) <= d for x in e):
                continue
            key = (len(P), tuple(P))
            if best is None or key > best:
                best = key
    return None if best is None else np.array(best[1])


def test_pole_set_example():
    poles, tent = build_pole_set(_maj([0, 0.5, 2, 3.7, 4]), 0.0, 4.0, 1.0)
    assert np.array_equal(poles, [0.0, 2.0, 4.0])
    assert np.array_equal(_poles_brute(np.array([0, 0.5, 2, 3.7, 4.0]), 1.0), poles)


def test_pole_set_endpoints_only_gives_chord():
    maj = ConcaveMajorant(np.array([0.0, 3.0]), np.array([1.0, -2.0]))
    poles, tent = build_pole_set(maj, 0.0, 3.0, 1.0)
    assert np.array_equal(poles, [0.0, 3.0])
    assert tent(1.5) == -0.5


def test_pole_set_matches_exhaustive_search_and_audit():
    gen = np.random.default_rng(0)
    for _ in range(100):
        q = gen.integers(2, 9)
        e = np.unique(np.round(np.concatenate([[0.0, 6.0], gen.uniform(0, 6, q - 2)]), 6))
        d = gen.uniform(1.0, 2.5)
        poles, tent = build_pole_set(_maj(e), 0.0, 6.0, d)
        assert np.array_equal(poles, _poles_brute(e, d))
        assert poles[0] == 0.0 and poles[-1] == 6.0
        assert np.all(np.diff(poles) > d)
        assert all(np.min(np.abs(poles - x)) <= d for x in e)
        assert np.allclose(tent(poles), _maj(e)(poles))


def test_pole_set_preconditions():
    maj = _maj([0, 1, 2, 3])
    with pytest.raises(InvalidInput):
        build_pole_set(maj, 2.0, 1.0, 1.0)
    with pytest.raises(InvalidInput):
        build_pole_set(maj, 0.0, 3.0, 0.5)
    with pytest.raises(InvalidInput):
        build_pole_set(maj, 0.0, 3.0, 3.0)
    with pytest.raises(InvalidInput):
        build_pole_set(maj, 0.5, 3.0, 1.0)


# ---------------------------------------------------------------------------
# side data, reconstruction and corners

def _side(k=2, seed=0, steps=16, il=4, ir=12):
    gen = np.random.default_rng(seed)
    grid = TimeGrid(-2.0, 2.0, steps)
    curves = -np.sort(-gen.normal(size=(k, steps + 1)), axis=0) + np.arange(k, 0, -1)[:, None]
    return grid, curves, decompose(grid, curves, il, ir)


def test_reconstruct_roundtrip():
    grid, curves, (side, mid) = _side(k=3, seed=1)
    out = reconstruct(side, mid)
    assert np.allclose(out, curves, atol=1e-13, rtol=0)
    assert np.array_equal(out[:, [0, 4, 12, 16]], curves[:, [0, 4, 12, 16]])
    assert np.array_equal(out[:, 4:13], curves[:, 4:13])
    # dyadic data and weights: the round trip is bit-exact
    dy = np.round(curves * 2**10) / 2**10
    side, mid = decompose(grid, dy, 4, 12)
    assert np.array_equal(reconstruct(side, mid), dy)


def test_reconstruct_straight_lines_and_perturbation():
    grid = TimeGrid(-2.0, 2.0, 16)
    side = SideData(grid, 4, 12, np.array([3.0, 1.0]), np.array([2.0, 0.0]),
                    np.zeros((2, 5)), np.zeros((2, 5)))
    out = reconstruct(side, None, side.u, side.v)
    assert np.allclose(out[:, :5], side.u[:, None])
    assert np.allclose(out[:, 12:], side.v[:, None])
    x, y = np.array([4.0, 2.0]), np.array([1.0, -1.0])
    base = reconstruct(side, None, x, y)
    delta = 0.3
    moved = reconstruct(side, None, x + [delta, 0.0], y)
    s = grid.times[:5]
    assert np.allclose(moved[0, :5] - base[0, :5], (s + 2.0) / (-1.0 + 2.0) * delta, atol=1e-14)
    assert np.array_equal(moved[1], base[1])


def test_reconstruct_errors():
    grid, curves, (side, mid) = _side()
    with pytest.raises(InvalidInput):
        reconstruct(side, mid[:, :-1])
    with pytest.raises(InvalidInput):
        reconstruct(side, mid, xbar=mid[:, 0] + 1.0)
    with pytest.raises(InvalidInput):
        reconstruct(side, None, xbar=mid[:, 0])


def test_corner_single_curve_flat_floor():
    grid = TimeGrid(-2.0, 2.0, 16)
    c, a = -0.7, 0.4
    side = SideData(grid, 4, 12, np.array([a]), np.array([a]), np.zeros((1, 5)), np.zeros((1, 5)))
    cv = corner_vectors(side, np.full(17, c))
    assert cv.left[0] == pytest.approx(c, abs=1e-14)
    assert cv.right[0] == pytest.approx(c, abs=1e-14)
    assert cv.left_contact[0] == 4 and cv.right_contact[0] == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), k=st.integers(1, 4), shift=st.floats(0.0, 2.0))
def test_corner_monotone_in_floor(seed, k, shift):
    grid, curves, (side, _) = _side(k=k, seed=seed)
    fl = np.random.default_rng(seed + 1).normal(size=17) - 5.0
    bump = np.zeros(17)
    bump[2:15] = shift
    a = corner_vectors(side, fl)
    b = corner_vectors(side, fl + bump)
    assert np.all(b.left >= a.left - 1e-12) and np.all(b.right >= a.right - 1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), k=st.integers(1, 4))
def test_corner_admissibility_is_exact(seed, k):
    grid, curves, (side, _) = _side(k=k, seed=seed)
    fl = np.random.default_rng(seed + 1).normal(size=17) - 4.0
    cv = corner_vectors(side, fl)
    step = np.arange(k, 0, -1, dtype=float)
    far_r = cv.right + step
    far_l = cv.left + step
    assert side_no_touch(side, fl, far_l, far_r) and cv.admissible(far_l, far_r)
    for d, expect in ((1e-6, True), (-1e-6, False)):
        xl = cv.left + d * step
        assert cv.admissible(xl) is expect
        assert side_no_touch(side, fl, xl, far_r) is expect
        yr = cv.right + d * step
        assert cv.admissible(far_l, yr) is expect
        assert side_no_touch(side, fl, far_l, yr) is expect


# ---------------------------------------------------------------------------
# favourable event

def test_check_fav_examples():
    T = 2.0
    g = TimeGrid(-2 * T, 2 * T, 16)
    u = np.full(2, -2 * SQ2 * T * T)
    zero = CornerVectors(np.zeros(2), np.zeros(2), np.zeros(2, int), np.zeros(2, int))
    assert check_fav(u, u, SampledPath(g, np.zeros(17)), zero, T)
    bump = np.zeros(17)
    bump[8] = T * T + 0.1
    assert not check_fav(u, u, SampledPath(g, bump), zero, T)
    assert not check_fav(u + 2 * T * T, u, SampledPath(g, np.zeros(17)), zero, T)
    big = CornerVectors(np.array([T * T + 1, 0.0]), np.zeros(2), np.zeros(2, int), np.zeros(2, int))
    assert not check_fav(u, u, SampledPath(g, np.zeros(17)), big, T)


def test_fav_instances_have_wide_middle():
    gen = RngStream(3).generator
    n_fav = 0
    for _ in range(300):
        T = float(gen.choice([1.0, 1.5, 2.0]))
        ctx = random_context(2, T, 1.0, gen)
        if ctx.fav():
            n_fav += 1
            assert ctx.l <= -T / 2 and ctx.r >= T / 2
    assert n_fav > 10


# ---------------------------------------------------------------------------
# contexts

def test_context_invariants():
    gen = RngStream(4).generator
    for _ in range(200):
        T = float(gen.choice([1.0, 1.5, 2.0]))
        d_ip = float(gen.choice([1.0, 1.2]))
        k = int(gen.integers(1, 4))
        ctx = random_context(k, T, d_ip, gen)
        P = ctx.poles
        assert P[0] == ctx.l and P[-1] == ctx.r
        assert np.all(np.diff(P) > ctx.d_ip)
        assert np.all(np.abs(ctx.tent.slopes) <= 4 * T + 1e-9)
        assert np.array_equal(ctx.tent(P), ctx.floor.values[ctx.pole_idx])
        t = ctx.mid_grid.times
        assert np.all(ctx.floor_mid <= ctx.tent(t) + 8 * ctx.d_ip * T)
        if d_ip == 1.0:
            assert len(P) <= 2 * T


def test_build_context_validation():
    grid = TimeGrid(-2.0, 2.0, 32)
    t = grid.times
    top = np.array([-t**2 / SQ2 + 1.0])
    fl = -t**2 / SQ2
    with pytest.warns(EpsilonValidityWarning):
        ctx = build_context(1, 1.0, grid, top, fl)
    assert ctx.warnings and ctx.T == 1.0
    with pytest.raises(InvalidInput):
        build_context(1, 1.0, grid, top, fl, strict=True)
    with pytest.raises(InvalidInput):
        _quiet(build_context, 1, 1.0, TimeGrid(-2.0, 2.0, 30), top[:, :31], fl[:31])
    with pytest.raises(InvalidInput):
        _quiet(build_context, 2, 1.0, grid, top, fl)
    with pytest.raises(InvalidInput):
        _quiet(build_context, 1, 1.0, grid, top, fl, eps=0.5)
    steep = 40 * t                      # majorant slope above 4T everywhere
    with pytest.raises(FavFailure):
        _quiet(build_context, 1, 1.0, grid, steep[None] + 1.0, steep)


# ---------------------------------------------------------------------------
# Wiener candidate and tests

def test_wiener_candidate_marginals():
    ctx = _fixed_context()
    N = 100_000
    c = sample_wiener_candidate_batch(ctx, N, RngStream(5))
    a, b = ctx.grid.a, ctx.grid.b
    for i in range(ctx.k):
        m = ctx.side.u[i] + (ctx.l - a) / (b - a) * (ctx.side.v[i] - ctx.side.u[i])
        var = (ctx.l - a) * (b - ctx.l) / (b - a)
        x = c[:, i, 0]
        assert abs(x.mean() - m) < 3 * np.sqrt(var / N)
        assert abs(x.var() - var) < 3 * var * np.sqrt(2 / N)
        # mid-gridpoint marginal as well
        j = (ctx.ir - ctx.il) // 2
        s = ctx.mid_grid.times[j]
        m = ctx.side.u[i] + (s - a) / (b - a) * (ctx.side.v[i] - ctx.side.u[i])
        var = (s - a) * (b - s) / (b - a)
        assert abs(c[:, i, j].mean() - m) < 3 * np.sqrt(var / N)
        assert abs(c[:, i, j].var() - var) < 3 * var * np.sqrt(2 / N)
    r = np.corrcoef(c[:, 0, 5], c[:, 1, 5])[0, 1]
    assert abs(r) < 3 / np.sqrt(N)
    paths = sample_wiener_candidate(ctx, RngStream(6))
    assert len(paths) == 2 and paths[0].grid == ctx.mid_grid


def test_wiener_candidate_avoids_with_huge_gaps():
    grid = TimeGrid(-2.0, 2.0, 32)
    t = grid.times
    fl = -t**2 / SQ2 - 60.0
    top = np.array([-t**2 / SQ2 + 60.0, -t**2 / SQ2])
    ctx = _quiet(build_context, 2, 1.0, grid, top, fl)
    c = sample_wiener_candidate_batch(ctx, 2000, RngStream(7))
    ok = [run_candidate_tests(x, ctx).T3 for x in c]
    assert np.mean(ok) == 1.0


def test_candidate_test_examples():
    ctx = _fixed_context()
    m = ctx.ir - ctx.il + 1
    high = np.array([np.full(m, 100.0), np.full(m, 50.0)])
    assert run_candidate_tests(high, ctx) == TestOutcome(True, True, True)
    low = high.copy()
    low[1, ctx.pole_idx[1] - ctx.il] = ctx.floor.values[ctx.pole_idx[1]] - 1.0
    out = run_candidate_tests(low, ctx)
    assert not out.T2 and not out.T3
    with pytest.raises(AssertionError):
        TestOutcome(True, False, True)


def test_t3_implies_t2_on_random_candidates():
    gen = RngStream(8).generator
    n3 = 0
    for _ in range(10):
        ctx = random_context(2, 1.0, 1.0, gen, gap=2.0, noise=0.5)
        for cand in sample_wiener_candidate_batch(ctx, 1000, gen):
            out = run_candidate_tests(cand, ctx)      # TestOutcome asserts T3 => T2
            n3 += out.T3
    assert n3 > 0


# ---------------------------------------------------------------------------
# jump ensemble

def test_jump_samples_pass_side_and_jump_tests():
    ctx = _fixed_context()
    vals, att, t3 = sample_jump_ensemble_batch(ctx, 2000, RngStream(9))
    assert att >= 2000
    for v, flag in zip(vals, t3):
        out = run_candidate_tests(v, ctx)
        assert out.T1 and out.T2 and out.T3 == flag
    paths, att, flag = sample_jump_ensemble(ctx, RngStream(10))
    assert run_candidate_tests(paths, ctx).T2


def test_jump_ensemble_matches_naive_rejection():
    # two independent routes to the law of the candidate given all three tests
    ctx = _fixed_context()
    vals, _, t3 = sample_jump_ensemble_batch(ctx, 40_000, RngStream(11))
    mid = (ctx.ir - ctx.il) // 2
    a = vals[t3][:5000, :, mid]
    assert a.shape[0] == 5000
    ref, _ = naive_conditioned_candidates(ctx, 5000, RngStream(12))
    crit = stats.kstwo.ppf(0.99, 2500)
    for i in range(ctx.k):
        assert stats.ks_2samp(a[:, i], ref[:, i, mid]).statistic < crit
