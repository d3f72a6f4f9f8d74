"""Jump-ensemble apparatus for resampling the top ``k`` curves of a line ensemble.

Data live on a uniform grid over ``[-2T, 2T]`` whose gridpoints include
``-T, T`` and the hull breakpoints. The lower boundary is curve ``k+1``
(``floor``); the top ``k`` curves enter through their values ``u`` at ``-2T``,
``v`` at ``2T`` and their standard bridges on the side intervals
``[-2T, l]`` and ``[r, 2T]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .bridges import cell_acceptance, no_touch_values
from .core import RngLike, SampledPath, TimeGrid, as_generator, brownian_motion_batch, pin_motion
from .errors import FavFailure, InvalidInput, RejectionExhausted
from .tmvn import OrthantTruncatedNormal


class EpsilonValidityWarning(UserWarning):
    """``eps`` violates the smallness conditions attached to the constants."""


# ---------------------------------------------------------------------------
# constants

_C_RATIO = (3.0 - 2.0**1.5) ** 1.5 * 10.0**-1.5


@dataclass(frozen=True)
class RegularityConstants:
    """``c_1..c_k``, ``C_1..C_k`` and ``D_k`` derived from the base pair ``(c, C)``.

    ``C_1`` is the base constant ``C``; the closed form applies from ``k = 2``.
    """

    k: int
    c: float
    C: float
    c_seq: Tuple[float, ...]
    C_seq: Tuple[float, ...]
    D_k: float

    @property
    def c_k(self) -> float:
        return self.c_seq[-1]

    @property
    def C_k(self) -> float:
        return self.C_seq[-1]


def little_c(j: int, c: float) -> float:
    c1 = min(2.0**-2.5 * c, 0.125)
    return _C_RATIO ** (j - 1) * c1


def big_c(j: int, c: float, C: float) -> float:
    if j == 1:
        return C
    a = 10.0 * 20.0 ** (j - 1) * 5.0 ** (j / 2.0) * (10.0 / (3.0 - 2.0**1.5)) ** (j * (j - 1) / 2.0) * C
    return max(a, np.exp(c / 2.0))


def min_D(k: int, c: float) -> float:
    return max(little_c(k, c) ** (-1.0 / 3.0) * (2.0**-4.5 - 2.0**-5) ** (-1.0 / 3.0),
               36.0 * (k * k - 1))


def regularity_constants(k: int, c: float, C: float, D_k: Optional[float] = None) -> RegularityConstants:
    """Closed-form constants; ``D_k`` defaults to its minimal admissible value and
    may only be raised."""
    if k < 1 or not (c > 0 and C > 0):
        raise InvalidInput("need k >= 1 and c, C > 0")
    dmin = min_D(k, c)
    if D_k is None:
        D_k = dmin
    elif D_k < dmin:
        raise InvalidInput(f"D_k may only be increased above its minimum {dmin}")
    return RegularityConstants(k, c, C, tuple(little_c(j, c) for j in range(1, k + 1)),
                               tuple(big_c(j, c, C) for j in range(1, k + 1)), float(D_k))


def jump_scale(D_k: float, eps: float) -> float:
    """``T = D_k (log 1/eps)^{1/3}``."""
    if not 0 < eps < 1:
        raise InvalidInput("eps must lie in (0, 1)")
    return float(D_k * np.log(1.0 / eps) ** (1.0 / 3.0))


def eps_for_scale(D_k: float, T: float) -> float:
    """Inverse of :func:`jump_scale`."""
    return float(np.exp(-((T / D_k) ** 3)))


def epsilon_violations(consts: RegularityConstants, eps: float, d_ip: float) -> List[str]:
    """Names of the smallness conditions on ``eps`` that fail."""
    out = []
    k = consts.k
    if not eps < 18.0**-1.5 * consts.C_k**-1.5 * consts.D_k**-1.5:
        out.append("eps < 18^{-3/2} C_k^{-3/2} D_k^{-3/2}")
    # compare logs: the bound itself underflows for any d_ip >= 1
    if not np.log(eps) < -2e7 * k**1.5 * d_ip**6:
        out.append("eps < exp(-2e7 k^{3/2} d_ip^6)")
    return out


# ---------------------------------------------------------------------------
# concave majorant, (l, r), poles, tent

@dataclass
class ConcaveMajorant:
    """Upper hull of a sampled curve: breakpoints ``x`` with values ``y``."""

    x: np.ndarray
    y: np.ndarray

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.y) / np.diff(self.x)

    def __call__(self, t):
        return np.interp(t, self.x, self.y)


def least_concave_majorant(curve: SampledPath) -> ConcaveMajorant:
    """Least concave majorant of the piecewise-linear curve (monotone chain upper hull)."""
    t = curve.grid.times
    f = curve.values
    hx: List[float] = []
    hy: List[float] = []
    for xi, yi in zip(t, f):
        while len(hx) >= 2:
            # drop the last point unless it lies strictly above the chord
            x1, y1, x2, y2 = hx[-2], hy[-2], hx[-1], hy[-1]
            if (y2 - y1) * (xi - x1) <= (yi - y1) * (x2 - x1):
                hx.pop()
                hy.pop()
            else:
                break
        hx.append(xi)
        hy.append(yi)
    return ConcaveMajorant(np.array(hx), np.array(hy))


@dataclass(frozen=True)
class LRSelection:
    l: float
    r: float
    l_empty: bool
    r_empty: bool

    @property
    def degenerate(self) -> bool:
        return self.l_empty or self.r_empty or not self.l < self.r


def select_lr(maj: ConcaveMajorant, T: float) -> LRSelection:
    """``l = inf{x : c'(x) <= 4T}``, ``r = sup{x : c'(x) >= -4T}``; empty sets give ``T`` and ``-T``."""
    s = maj.slopes
    lo = np.nonzero(s <= 4 * T)[0]
    hi = np.nonzero(s >= -4 * T)[0]
    l = float(maj.x[lo[0]]) if lo.size else float(T)
    r = float(maj.x[hi[-1] + 1]) if hi.size else float(-T)
    return LRSelection(l, r, lo.size == 0, hi.size == 0)


@dataclass
class TentMap:
    """Piecewise-affine interpolation of the floor over the pole set."""

    poles: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.poles, self.values)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.poles)


def build_pole_set(maj: ConcaveMajorant, l: float, r: float, d_ip: float,
                   floor: Optional[SampledPath] = None) -> Tuple[np.ndarray, TentMap]:
    """Pole set of maximal cardinality, lexicographically maximal among those.

    Extreme points are the hull breakpoints in ``[l, r]``. An edge ``a -> b`` of
    the search is admissible when ``e_b - e_a > d_ip`` and every breakpoint
    strictly between lies within ``d_ip`` of ``e_a`` or ``e_b``.
    """
    if not l < r:
        raise InvalidInput("pole set needs l < r")
    if not (1.0 <= d_ip < r - l):
        raise InvalidInput(f"need d_ip in [1, r - l) = [1, {r - l})")
    tol = 1e-12 * max(1.0, abs(r - l))
    sel = (maj.x >= l - tol) & (maj.x <= r + tol)
    e = maj.x[sel]
    vals = maj.y[sel]
    if e.size < 2 or abs(e[0] - l) > tol or abs(e[-1] - r) > tol:
        raise InvalidInput("l and r must be breakpoints of the majorant")
    q = e.size

    def edge(a: int, b: int) -> bool:
        if not e[b] - e[a] > d_ip:
            return False
        mid = e[a + 1:b]
        return bool(np.all(np.minimum(mid - e[a], e[b] - mid) <= d_ip))

    best = np.full(q, -1, dtype=int)
    best[q - 1] = 1
    for a in range(q - 2, -1, -1):
        for b in range(a + 1, q):
            if best[b] > 0 and edge(a, b):
                best[a] = max(best[a], best[b] + 1)
    if best[0] < 0:
        raise InvalidInput("no admissible pole set contains both l and r")
    chain = [0]
    while chain[-1] != q - 1:
        a = chain[-1]
        nxt = [b for b in range(a + 1, q) if best[b] == best[a] - 1 and edge(a, b)]
        chain.append(max(nxt))
    poles = e[chain]
    pv = vals[chain] if floor is None else floor(poles)
    return poles, TentMap(poles, np.asarray(pv, dtype=float))


# ---------------------------------------------------------------------------
# side data, corners, reconstruction

@dataclass
class SideData:
    """Boundary values and standard side bridges for the top ``k`` curves."""

    grid: TimeGrid
    il: int
    ir: int
    u: np.ndarray              # values at -2T, shape (k,)
    v: np.ndarray              # values at 2T
    left: np.ndarray           # (k, il+1), zero at both ends
    right: np.ndarray          # (k, m-ir+1), zero at both ends

    @property
    def k(self) -> int:
        return self.u.shape[0]

    def left_weights(self) -> np.ndarray:
        """``(s + 2T)/(l + 2T)`` at the left-side gridpoints (exact 0 and 1 at the ends)."""
        w = np.arange(self.il + 1) / self.il
        return w

    def right_weights(self) -> np.ndarray:
        """``(2T - s)/(2T - r)`` at the right-side gridpoints."""
        n = self.grid.steps - self.ir
        return np.arange(n, -1, -1) / n


def decompose(grid: TimeGrid, curves: np.ndarray, il: int, ir: int) -> Tuple[SideData, np.ndarray]:
    """Split curves on ``[-2T, 2T]`` into side data and the middle part."""
    curves = np.asarray(curves, dtype=float)
    u = curves[:, 0].copy()
    v = curves[:, -1].copy()
    xb = curves[:, il]
    yb = curves[:, ir]
    side = SideData(grid, il, ir, u, v, np.empty(0), np.empty(0))
    wl = side.left_weights()
    wr = side.right_weights()
    left = curves[:, :il + 1] - _affine(u, xb, wl)
    right = curves[:, ir:] - _affine(v, yb, wr)
    left[:, 0] = left[:, -1] = 0.0
    right[:, 0] = right[:, -1] = 0.0
    side.left, side.right = left, right
    return side, curves[:, il:ir + 1].copy()


def _affine(end_val, inner_val, w):
    """``(1 - w) * end_val + w * inner_val`` per curve."""
    return (1.0 - w) * end_val[:, None] + w * inner_val[:, None]


def reconstruct(side: SideData, middle: Optional[np.ndarray] = None, xbar=None, ybar=None) -> np.ndarray:
    """Full curves on ``[-2T, 2T]`` from side data and a middle piece.

    On ``[-2T, l]`` curve ``i`` is its side bridge plus the affine function from
    ``u_i`` to ``x_i``; symmetrically on ``[r, 2T]``. With ``middle`` given the
    endpoint vectors are read from it (explicit ``xbar``/``ybar`` must agree);
    without it the middle is the affine interpolation of ``xbar`` and ``ybar``.
    """
    k = side.k
    il, ir = side.il, side.ir
    if middle is not None:
        middle = np.asarray(middle, dtype=float)
        if middle.shape != (k, ir - il + 1):
            raise InvalidInput("middle piece has the wrong shape for this grid")
        mx, my = middle[:, 0], middle[:, -1]
        if xbar is not None and not np.array_equal(np.asarray(xbar, dtype=float), mx):
            raise InvalidInput("xbar disagrees with the middle piece")
        if ybar is not None and not np.array_equal(np.asarray(ybar, dtype=float), my):
            raise InvalidInput("ybar disagrees with the middle piece")
        xbar, ybar = mx, my
    else:
        if xbar is None or ybar is None:
            raise InvalidInput("need xbar and ybar when no middle piece is given")
        xbar = np.asarray(xbar, dtype=float)
        ybar = np.asarray(ybar, dtype=float)
        w = np.arange(ir - il + 1) / (ir - il)
        middle = _affine(xbar, ybar, w)
    out = np.empty((k, side.grid.steps + 1))
    out[:, :il + 1] = side.left + _affine(side.u, xbar, side.left_weights())
    out[:, ir:] = side.right + _affine(side.v, ybar, side.right_weights())
    out[:, il:ir + 1] = middle
    out[:, 0] = side.u
    out[:, -1] = side.v
    out[:, il] = xbar
    out[:, ir] = ybar
    return out


@dataclass
class CornerVectors:
    """Minimal admissible endpoint vectors at ``l`` and ``r`` and their contact points."""

    left: np.ndarray
    right: np.ndarray
    left_contact: np.ndarray
    right_contact: np.ndarray

    def admissible(self, xbar, ybar=None) -> bool:
        ok = _positive_decreasing(np.asarray(xbar, dtype=float) - self.left)
        if ybar is not None:
            ok = ok and _positive_decreasing(np.asarray(ybar, dtype=float) - self.right)
        return bool(ok)


def _positive_decreasing(d: np.ndarray) -> bool:
    return bool(np.all(d > 0) and np.all(np.diff(d) < 0))


def _one_side_corners(bridges, end_vals, w, floor_vals):
    """Iterate from the lowest curve upwards; skip the gridpoint with zero weight."""
    k = bridges.shape[0]
    a = bridges + (1.0 - w) * end_vals[:, None]       # curve minus w * x_i
    s = slice(1, None)
    corner = np.empty(k)
    contact = np.empty(k, dtype=int)
    ratio = (floor_vals[s] - a[k - 1, s]) / w[s]
    j = int(np.argmax(ratio))
    corner[k - 1] = ratio[j]
    contact[k - 1] = j + 1
    for i in range(k - 2, -1, -1):
        ratio = (a[i + 1, s] - a[i, s]) / w[s]
        j = int(np.argmax(ratio))
        corner[i] = corner[i + 1] + ratio[j]
        contact[i] = j + 1
    return corner, contact


def corner_vectors(side: SideData, floor_vals: np.ndarray) -> CornerVectors:
    """Corner vectors at ``l`` and ``r``.

    ``x`` is admissible on the left side iff ``x - Corner_left`` is a decreasing
    list of positive numbers; there the reconstructed side curves avoid each
    other and the floor at every gridpoint. The contact index (in side-grid
    coordinates) is where the constraint for each curve binds.
    """
    il, ir = side.il, side.ir
    fl = np.asarray(floor_vals[:il + 1], dtype=float)
    fr = np.asarray(floor_vals[ir:], dtype=float)[::-1]
    cl, kl = _one_side_corners(side.left, side.u, side.left_weights(), fl)
    cr, kr = _one_side_corners(side.right[:, ::-1], side.v, side.right_weights()[::-1], fr)
    m_right = side.grid.steps - ir
    return CornerVectors(cl, cr, kl, m_right - kr)


def side_no_touch(side: SideData, floor_vals: np.ndarray, xbar, ybar) -> bool:
    """Reconstruct the side intervals with ``xbar, ybar`` and test avoidance at gridpoints."""
    full = reconstruct(side, None, xbar, ybar)
    il, ir = side.il, side.ir
    okl = no_touch_values(full[:, :il + 1], floor_vals[:il + 1])
    okr = no_touch_values(full[:, ir:], floor_vals[ir:])
    return bool(okl and okr)


# ---------------------------------------------------------------------------
# favourable event

def check_fav(u, v, floor_path: SampledPath, corners: CornerVectors, T: float,
              lr: Optional[LRSelection] = None) -> bool:
    """``F1 & F2 & F3``: boundary values in ``T^2[-2sqrt2 - 1, -2sqrt2 + 1]``,
    ``|floor| <= T^2`` on ``[-T, T]`` and all corners in ``[-T^2, T^2]``.

    When the event holds and ``lr`` is given, ``l <= -T/2`` and ``r >= T/2`` are
    asserted.
    """
    lo = T * T * (-2.0 * np.sqrt(2.0) - 1.0)
    hi = T * T * (-2.0 * np.sqrt(2.0) + 1.0)
    bv = np.concatenate([np.asarray(u, dtype=float), np.asarray(v, dtype=float)])
    f1 = bool(np.all((bv >= lo) & (bv <= hi)))
    t = floor_path.grid.times
    tol = 1e-9 * T
    inner = (t >= -T - tol) & (t <= T + tol)
    f2 = bool(np.all(np.abs(floor_path.values[inner]) <= T * T))
    cs = np.concatenate([corners.left, corners.right])
    f3 = bool(np.all(np.abs(cs) <= T * T))
    fav = f1 and f2 and f3
    if fav and lr is not None:
        assert lr.l <= -T / 2 + tol and lr.r >= T / 2 - tol, "favourable data must have l <= -T/2 <= T/2 <= r"
    return fav


# ---------------------------------------------------------------------------
# context

@dataclass
class JumpContext:
    k: int
    eps: float
    d_ip: float
    D_k: float
    T: float
    grid: TimeGrid
    floor: SampledPath
    majorant: ConcaveMajorant
    lr: LRSelection
    il: int
    ir: int
    poles: np.ndarray
    pole_idx: np.ndarray
    tent: TentMap
    side: SideData
    corners: CornerVectors
    warnings: List[str] = field(default_factory=list)

    @property
    def l(self) -> float:
        return self.lr.l

    @property
    def r(self) -> float:
        return self.lr.r

    @property
    def mid_grid(self) -> TimeGrid:
        return TimeGrid(self.l, self.r, self.ir - self.il)

    @property
    def floor_mid(self) -> np.ndarray:
        return self.floor.values[self.il:self.ir + 1]

    def fav(self) -> bool:
        return check_fav(self.side.u, self.side.v, self.floor, self.corners, self.T, self.lr)


def build_context(k: int, d_ip: float, grid: TimeGrid, top: np.ndarray, floor: np.ndarray,
                  eps: Optional[float] = None, consts: Optional[RegularityConstants] = None,
                  D_k: Optional[float] = None, strict: bool = False) -> JumpContext:
    """Assemble the jump-ensemble context from curves ``1..k+1`` on ``[-2T, 2T]``.

    ``T`` is read from the grid; ``eps`` defaults to the value matching ``T`` and
    ``D_k``. Violated smallness conditions on ``eps`` raise when ``strict`` and
    are otherwise recorded in ``ctx.warnings`` and issued as warnings.
    """
    top = np.asarray(top, dtype=float)
    floor = np.asarray(floor, dtype=float)
    if top.shape != (k, grid.steps + 1) or floor.shape != (grid.steps + 1,):
        raise InvalidInput("top must be (k, steps+1) and floor (steps+1,) on the grid")
    T = (grid.b - grid.a) / 4.0
    if not np.isclose(grid.a, -2 * T) or grid.steps % 4:
        raise InvalidInput("grid must be [-2T, 2T] with steps divisible by 4")
    if consts is None:
        consts = regularity_constants(k, 1.0, 1.0, D_k)
    D = consts.D_k if D_k is None else D_k
    if eps is None:
        eps = eps_for_scale(D, T)
    elif not np.isclose(jump_scale(D, eps), T, rtol=1e-9):
        raise InvalidInput(f"grid half-width/2 = {T} differs from D_k (log 1/eps)^(1/3)")
    notes = epsilon_violations(consts, eps, d_ip)
    if notes:
        if strict:
            raise InvalidInput("eps fails: " + "; ".join(notes))
        warnings.warn("eps fails: " + "; ".join(notes), EpsilonValidityWarning)
    fpath = SampledPath(grid, floor)
    q = grid.steps // 4
    inner = SampledPath(TimeGrid(-T, T, 2 * q), floor[q:3 * q + 1])
    maj = least_concave_majorant(inner)
    lr = select_lr(maj, T)
    if lr.degenerate:
        raise FavFailure(f"degenerate middle interval: l={lr.l}, r={lr.r}")
    il = grid.index_of(lr.l)
    ir = grid.index_of(lr.r)
    poles, tent = build_pole_set(maj, lr.l, lr.r, d_ip)
    pole_idx = np.array([grid.index_of(p) for p in poles])
    tent = TentMap(poles, floor[pole_idx])
    side, _ = decompose(grid, top, il, ir)
    corners = corner_vectors(side, floor)
    return JumpContext(k, float(eps), float(d_ip), float(D), float(T), grid, fpath, maj, lr,
                       il, ir, poles, pole_idx, tent, side, corners, notes)


# ---------------------------------------------------------------------------
# candidate sampling and tests

def _bridge_fdd_cov(times: np.ndarray, a: float, b: float) -> np.ndarray:
    s = np.minimum.outer(times, times) - a
    t = b - np.maximum.outer(times, times)
    return s * t / (b - a)


def _key_stats(ctx: JumpContext):
    """Means ``(k, |P|)`` and covariance ``(|P|, |P|)`` of the candidate at the poles."""
    a, b = ctx.grid.a, ctx.grid.b
    t = ctx.grid.times[ctx.pole_idx]
    w = (t - a) / (b - a)
    mu = ctx.side.u[:, None] + w[None, :] * (ctx.side.v - ctx.side.u)[:, None]
    return t, mu, _bridge_fdd_cov(t, a, b)


def _fill_between(ctx: JumpContext, key_vals: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Independent bridges between consecutive poles on the middle grid."""
    N, k, _ = key_vals.shape
    out = np.empty((N, k, ctx.ir - ctx.il + 1))
    times = ctx.grid.times
    for j in range(len(ctx.pole_idx) - 1):
        i0, i1 = ctx.pole_idx[j], ctx.pole_idx[j + 1]
        g = TimeGrid(times[i0], times[i1], i1 - i0)
        w = brownian_motion_batch(g, 0.0, N * k, gen).reshape(N, k, g.steps + 1)
        seg = pin_motion(w, g, key_vals[:, :, j], key_vals[:, :, j + 1])
        out[:, :, i0 - ctx.il:i1 - ctx.il + 1] = seg
    return out


def sample_wiener_candidate_batch(ctx: JumpContext, size: int, rng: RngLike) -> np.ndarray:
    """``size`` Wiener candidates on the middle grid, shape ``(size, k, m_mid+1)``."""
    gen = as_generator(rng)
    t, mu, cov = _key_stats(ctx)
    L = np.linalg.cholesky(cov)
    z = gen.standard_normal((size, ctx.k, len(t)))
    key = mu[None] + z @ L.T
    return _fill_between(ctx, key, gen)


def sample_wiener_candidate(ctx: JumpContext, rng: RngLike) -> List[SampledPath]:
    """Independent bridges on ``[-2T, 2T]`` with the context's boundary data, seen on ``[l, r]``."""
    vals = sample_wiener_candidate_batch(ctx, 1, rng)[0]
    g = ctx.mid_grid
    return [SampledPath(g, v) for v in vals]


@dataclass(frozen=True)
class TestOutcome:
    T1: bool
    T2: bool
    T3: bool

    def __post_init__(self):
        assert not (self.T3 and not self.T2), "middle-interval test passed but jump test failed"

    __test__ = False


def run_candidate_tests(candidate, ctx: JumpContext) -> TestOutcome:
    """Side-interval test (corner admissibility), jump test at the poles and
    middle-interval avoidance on ``[l, r]``."""
    vals = np.array([p.values for p in candidate]) if not isinstance(candidate, np.ndarray) else candidate
    xbar, ybar = vals[:, 0], vals[:, -1]
    t1 = ctx.corners.admissible(xbar, ybar)
    at_poles = vals[:, ctx.pole_idx - ctx.il]
    t2 = bool(np.all(at_poles > ctx.floor.values[ctx.pole_idx]))
    t3 = bool(no_touch_values(vals, ctx.floor_mid))
    return TestOutcome(bool(t1), t2, t3)


def _gap_transform(ctx: JumpContext):
    """Matrix ``B`` and bounds ``lb`` with ``{side and jump tests} = {B x > lb}``.

    ``x`` holds the pole values curve-major. Inner poles carry the floor; at
    ``l`` and ``r`` the coordinates are the consecutive gaps of ``x - Corner``
    and its last entry, which must all be positive.
    """
    k, q = ctx.k, len(ctx.pole_idx)
    n = k * q
    B = np.eye(n)
    lb = np.tile(ctx.floor.values[ctx.pole_idx], k)
    for j, c in ((0, ctx.corners.left), (q - 1, ctx.corners.right)):
        for i in range(k):
            lb[i * q + j] = c[i] - (c[i + 1] if i < k - 1 else 0.0)
            if i < k - 1:
                B[i * q + j, (i + 1) * q + j] = -1.0
    return B, lb


def sample_jump_ensemble_batch(ctx: JumpContext, size: int, rng: RngLike,
                               max_attempts: int = 10**6, correction: bool = False,
                               block: int = 8192):
    """``size`` jump-ensemble samples on ``[l, r]`` with attempts and middle-test flags.

    The side and jump tests only see the candidate at the poles, and after a
    triangular change of variables they are orthant constraints. The pole
    values are therefore drawn exactly from a truncated Gaussian; ``attempts``
    counts its proposals. Independent bridges then fill in between
    consecutive poles.
    """
    gen = as_generator(rng)
    k = ctx.k
    t, mu, cov = _key_stats(ctx)
    q = len(t)
    B, lb = _gap_transform(ctx)
    full = np.kron(np.eye(k), cov)
    tn = OrthantTruncatedNormal(B @ mu.reshape(-1), B @ full @ B.T, lb)
    try:
        w, attempts = tn.sample(size, gen, max_attempts)
    except RejectionExhausted as exc:
        raise RejectionExhausted(
            f"jump ensemble: {exc.accepted} accepted in {exc.attempts} attempts "
            f"(acceptance estimate {exc.acceptance:.3e})", exc.attempts, exc.accepted) from exc
    key = np.linalg.solve(B, w.T).T.reshape(size, k, q)
    vals = _fill_between(ctx, key, gen)
    t3 = no_touch_values(vals, ctx.floor_mid)
    if correction:
        p = np.zeros(size)
        if np.any(t3):
            p[t3] = cell_acceptance(vals[t3], ctx.grid.h, ctx.floor_mid)
        t3 = t3 & (gen.random(size) < p)
    return vals, attempts, t3


def sample_jump_ensemble(ctx: JumpContext, rng: RngLike, max_attempts: int = 10**6,
                         correction: bool = False):
    """One jump-ensemble sample: ``(k paths on [l, r], attempts, t3_flag)``."""
    vals, att, t3 = sample_jump_ensemble_batch(ctx, 1, rng, max_attempts, correction, block=1024)
    g = ctx.mid_grid
    return [SampledPath(g, v) for v in vals[0]], att, bool(t3[0])


def naive_conditioned_candidates(ctx: JumpContext, size: int, rng: RngLike,
                                 max_attempts: int = 10**7, block: int = 20000):
    """Reference sampler: whole-path candidates kept when the reconstructed side
    intervals avoid each other and the floor and the middle passes avoidance.

    Side tests go through :func:`reconstruct`, independent of the corner vectors.
    """
    gen = as_generator(rng)
    out = []
    got = attempts = 0
    fl = ctx.floor.values
    while got < size and attempts < max_attempts:
        cand = sample_wiener_candidate_batch(ctx, block, gen)
        attempts += block
        mid_ok = no_touch_values(cand, ctx.floor_mid)
        for j in np.nonzero(mid_ok)[0]:
            if side_no_touch(ctx.side, fl, cand[j, :, 0], cand[j, :, -1]):
                out.append(cand[j])
                got += 1
                if got == size:
                    break
    if got < size:
        raise RejectionExhausted("reference sampler exhausted", attempts, got)
    return np.array(out), attempts


# ---------------------------------------------------------------------------
# synthetic contexts

def synthetic_curves(k: int, T: float, steps: int, gen: np.random.Generator,
                     gap: float = 1.0, noise: float = 1.0, depth: float = 0.0):
    """Curves ``1..k+1`` on ``[-2T, 2T]`` shaped like a scaled ensemble.

    Curve ``i`` is ``-x^2/sqrt(2) + (k+1-i) gap - depth`` plus a two-sided
    Brownian motion from 0 scaled by ``noise``; curves are sorted pointwise so
    the family is ordered.
    """
    grid = TimeGrid(-2 * T, 2 * T, steps)
    t = grid.times
    half = steps // 2
    g = TimeGrid(0.0, 2 * T, half)
    w = brownian_motion_batch(g, 0.0, 2 * (k + 1), gen).reshape(2, k + 1, half + 1)
    bm = np.concatenate([w[0, :, ::-1], w[1, :, 1:]], axis=1)
    base = -t**2 / np.sqrt(2.0) - depth
    curves = base + noise * bm + gap * np.arange(k, -1, -1)[:, None]
    curves = -np.sort(-curves, axis=0)
    return grid, curves[:k], curves[k]


def random_context(k: int, T: float, d_ip: float, rng: RngLike, steps_per_unit: int = 16,
                   gap: float = 1.0, noise: float = 1.0, depth: float = 0.0,
                   max_tries: int = 1000) -> JumpContext:
    """Draw synthetic curves until a context can be built (degenerate draws are skipped)."""
    gen = as_generator(rng)
    steps = int(round(4 * T * steps_per_unit))
    steps += (-steps) % 4
    for _ in range(max_tries):
        grid, top, fl = synthetic_curves(k, T, steps, gen, gap, noise, depth)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EpsilonValidityWarning)
                return build_context(k, d_ip, grid, top, fl)
        except (FavFailure, InvalidInput):
            continue
    raise RejectionExhausted("could not draw a non-degenerate context", max_tries, 0)
