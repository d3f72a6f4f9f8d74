"""Mutually avoiding Brownian bridge ensembles.

Curves are stored as arrays whose second-to-last axis indexes the curve (top
curve first) and whose last axis indexes gridpoints. Avoidance is checked at
gridpoints; the optional per-cell correction accepts a proposal with the exact
conditional probability that independent bridges joining consecutive
gridpoint values avoid each other (and the floor) inside every cell, which
makes the accepted law exact at the gridpoints.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import RngLike, SampledPath, TimeGrid, as_generator, brownian_motion_batch, pin_motion
from .errors import InvalidInput, KMCancellationWarning, NumericalFailure, RejectionExhausted

_EXP_CAP = 700.0


class DecreasingList(np.ndarray):
    """Real vector with ``x_1 > ... > x_k`` (or ``>=`` when ``strict=False``)."""

    def __new__(cls, values, strict: bool = True):
        arr = np.asarray(values, dtype=float).reshape(-1).view(cls)
        d = np.diff(arr)
        if strict and np.any(d >= 0):
            raise InvalidInput(f"not a strictly decreasing list: {np.asarray(arr)}")
        if not strict and np.any(d > 0):
            raise InvalidInput(f"not a weakly decreasing list: {np.asarray(arr)}")
        return arr


@dataclass
class FloorCurve:
    """Lower boundary: ``path=None`` stands for the constant ``-inf``."""

    path: Optional[SampledPath] = None

    @property
    def finite(self) -> bool:
        return self.path is not None

    def values_on(self, grid: TimeGrid) -> Optional[np.ndarray]:
        if self.path is None:
            return None
        if self.path.grid != grid:
            raise InvalidInput("floor grid differs from the ensemble grid")
        return self.path.values


NEG_INF = FloorCurve(None)


@dataclass
class BridgeEnsembleSpec:
    """``k`` bridges on ``[a, b]`` from ``x`` to ``y`` conditioned to avoid each other
    and, when finite, the floor."""

    k: int
    a: float
    b: float
    x: np.ndarray
    y: np.ndarray
    floor: FloorCurve = field(default_factory=FloorCurve)

    def __post_init__(self):
        if not self.a < self.b:
            raise InvalidInput("need a < b")
        self.x = DecreasingList(self.x)
        self.y = DecreasingList(self.y)
        if len(self.x) != self.k or len(self.y) != self.k:
            raise InvalidInput("endpoint vectors must have k entries")
        if self.floor is None:
            self.floor = NEG_INF
        if self.floor.finite:
            g = self.floor.path.grid
            if not (np.isclose(g.a, self.a) and np.isclose(g.b, self.b)):
                raise InvalidInput("floor must be defined on [a, b]")
            if not (self.x[-1] > self.floor.path.values[0] and self.y[-1] > self.floor.path.values[-1]):
                raise InvalidInput("endpoints of the lowest curve must lie above the floor")


def _as_array(ensemble) -> Tuple[np.ndarray, Optional[TimeGrid]]:
    if isinstance(ensemble, np.ndarray):
        return ensemble, None
    paths = list(ensemble)
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid != grid:
            raise InvalidInput("curves are on mismatched grids")
    return np.array([p.values for p in paths]), grid


def no_touch_values(vals: np.ndarray, floor_vals: Optional[np.ndarray] = None,
                    sl: slice = slice(None)) -> np.ndarray:
    """Vectorised gridpoint avoidance on arrays of shape ``(..., k, m+1)``."""
    v = vals[..., sl]
    ok = np.all(v[..., :-1, :] > v[..., 1:, :], axis=(-2, -1))
    if floor_vals is not None:
        ok &= np.all(v[..., -1, :] > floor_vals[sl], axis=-1)
    return ok


def no_touch(ensemble, floor: FloorCurve = NEG_INF, sub: Optional[Tuple[float, float]] = None) -> bool:
    """Strict ordering of the curves (and strict floor avoidance) at every gridpoint.

    ``ensemble`` is a sequence of :class:`SampledPath` sharing one grid. ``sub``
    restricts the check to the gridpoints of a subinterval.
    """
    vals, grid = _as_array(ensemble)
    floor = NEG_INF if floor is None else floor
    sl = slice(None)
    if sub is not None:
        t = grid.times
        tol = 1e-12 * (grid.b - grid.a)
        idx = np.nonzero((t >= sub[0] - tol) & (t <= sub[1] + tol))[0]
        sl = slice(idx[0], idx[-1] + 1)
    fv = floor.values_on(grid) if floor.finite else None
    return bool(no_touch_values(vals, fv, sl))


# ---------------------------------------------------------------------------
# Karlin-McGregor

def _log_h(x: np.ndarray, y: np.ndarray, dt: float) -> np.ndarray:
    """``log`` of the (unnormalised) heat kernel matrix ``-(y_j - x_i)^2/(2 dt)``."""
    return -((y[..., None, :] - x[..., :, None]) ** 2) / (2.0 * dt)


def km_ratio(x: np.ndarray, y: np.ndarray, dt: float, killed: bool = False) -> np.ndarray:
    """Avoidance probability for independent bridges from ``x`` to ``y`` over time ``dt``.

    ``x`` and ``y`` have shape ``(..., k)`` and are decreasing along the last axis.
    With ``killed=True`` the bridges must also stay positive (heat kernel with
    absorption at 0). Non-ordered data get probability 0. Entries are normalised
    by the diagonal; each permutation term of the normalised determinant is at
    most 1, and single entries are capped to avoid overflow.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = x.shape[-1]
    ordered = np.all(np.diff(x, axis=-1) < 0, axis=-1) & np.all(np.diff(y, axis=-1) < 0, axis=-1)
    if killed:
        ordered &= (x[..., -1] > 0) & (y[..., -1] > 0)
    if k == 1 and not killed:
        return np.where(ordered, 1.0, 0.0)
    if k == 1:
        p = -np.expm1(-2.0 * x[..., 0] * y[..., 0] / dt)
        return np.where(ordered, p, 0.0)
    if k == 2 and not killed:
        p = -np.expm1(-(x[..., 0] - x[..., 1]) * (y[..., 0] - y[..., 1]) / dt)
        return np.where(ordered, p, 0.0)
    lh = _log_h(x, y, dt)
    diag = np.diagonal(lh, axis1=-2, axis2=-1)[..., :, None]
    m = np.exp(np.minimum(lh - diag, _EXP_CAP))
    if killed:
        refl = -((y[..., None, :] + x[..., :, None]) ** 2) / (2.0 * dt)
        m = m - np.exp(np.minimum(refl - diag, _EXP_CAP))
    with np.errstate(all="ignore"):
        det = np.linalg.det(m)
    det = np.where(np.isfinite(det), det, 0.0)
    return np.where(ordered, np.clip(det, 0.0, 1.0), 0.0)


def km_avoidance(spec: BridgeEnsembleSpec, cond_limit: float = 1e8) -> float:
    """Non-touching probability ``det(h(x_i, y_j)) / prod_i h(x_i, y_i)`` with
    ``h(x, y) = g_{0, b-a}(y - x)``.

    For ``k >= 6`` the determinant is evaluated in the log domain with row
    scaling. A :class:`KMCancellationWarning` is issued when the condition
    number of the scaled matrix exceeds ``cond_limit``.
    """
    if spec.floor.finite:
        raise InvalidInput("km_avoidance needs floor = -inf")
    k = spec.k
    if k == 1:
        return 1.0
    dt = spec.b - spec.a
    x = np.asarray(spec.x, dtype=float)
    y = np.asarray(spec.y, dtype=float)
    lh = _log_h(x, y, dt)
    if k < 6:
        diag = np.diag(lh)[:, None]
        m = np.exp(lh - diag)
        val = float(np.linalg.det(m))
        cond = np.linalg.cond(m)
    else:
        rmax = lh.max(axis=1, keepdims=True)
        m = np.exp(lh - rmax)
        sign, logdet = np.linalg.slogdet(m)
        val = float(sign * np.exp(logdet + rmax.sum() - np.trace(lh)))
        cond = np.linalg.cond(m)
    if not np.isfinite(val):
        raise NumericalFailure("Karlin-McGregor determinant is not finite")
    if cond > cond_limit:
        warnings.warn(f"Karlin-McGregor determinant ill-conditioned (cond={cond:.2e}); "
                      f"value {val:.3e} may have lost accuracy", KMCancellationWarning)
    return float(min(max(val, 0.0), 1.0))


def vandermonde_expansion(eta: float, rho: float, y: Sequence[float], K: float):
    """Leading small-``eta`` term of the avoidance probability with entrance ``eta*(k-1,...,0)``.

    Returns ``(leading, E_lower, E_upper)`` where ``leading`` is
    ``eta^{k(k-1)/2} rho^{-k(k-1)/2} prod_{i<j} (y_i - y_j)`` and the relative
    error lies in ``[-2 eta k^2 K/rho, (e^2 - 1) eta k^2 K/rho]``. The bridges run
    over ``[0, rho]`` to the decreasing list ``y`` in ``[-K, K]``.
    """
    y = DecreasingList(y)
    k = len(y)
    if not (0 < eta < rho / (k * k * K)):
        raise InvalidInput(f"eta must lie in (0, rho k^-2 K^-1) = (0, {rho / (k * k * K)})")
    if np.any(np.abs(y) > K):
        raise InvalidInput("exit data must lie in [-K, K]")
    e = k * (k - 1) // 2
    prod = 1.0
    for i in range(k):
        for j in range(i + 1, k):
            prod *= y[i] - y[j]
    leading = eta**e * rho ** (-e) * prod
    t = eta * k * k * K / rho
    return float(leading), float(-2.0 * t), float((np.e**2 - 1.0) * t)


# ---------------------------------------------------------------------------
# crossing probabilities

def sup_crossing_prob(h: float, r: float, a: float, b: float) -> float:
    """``P(sup B >= h + r)`` for a bridge from ``h`` to ``h`` on ``[a, b]``: ``exp(-2 r^2/(b-a))``."""
    if not r > 0:
        raise InvalidInput("r must be positive")
    if not b > a:
        raise InvalidInput("need b > a")
    return float(np.exp(-2.0 * r * r / (b - a)))


def cell_crossing_prob(u, v, level, dt):
    """Probability that a bridge from ``u`` to ``v`` over ``dt`` reaches ``level`` from below.

    Equal to ``exp(-2 (level-u)(level-v)/dt)`` when both ends lie below the level
    and to 1 otherwise. Vectorised.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    du = level - u
    dv = level - v
    inside = (du > 0) & (dv > 0)
    with np.errstate(over="ignore"):
        p = np.exp(-2.0 * np.where(inside, du * dv, 0.0) / dt)
    return np.where(inside, p, 1.0)


def sup_exceeds_with_correction(vals: np.ndarray, level: float, dt: float,
                                gen: np.random.Generator) -> np.ndarray:
    """Bernoulli draw of ``{sup >= level}`` for bridges known at gridpoints.

    ``vals`` has shape ``(N, m+1)``; between gridpoints the path is a Brownian
    bridge, so ``P(sup < level | grid) = prod_cells (1 - p_cell)``.
    """
    p = cell_crossing_prob(vals[:, :-1], vals[:, 1:], level, dt)
    stay = np.prod(1.0 - p, axis=1)
    return gen.random(vals.shape[0]) >= stay


def cell_acceptance(vals: np.ndarray, dt: float, floor_vals: Optional[np.ndarray] = None) -> np.ndarray:
    """Product over cells of the conditional avoidance probability.

    ``vals`` has shape ``(N, k, m+1)``; ``floor_vals`` (shape ``(m+1,)``) is linear
    within each cell, so subtracting it keeps each curve a bridge.
    """
    if floor_vals is not None:
        vals = vals - floor_vals
    x = np.swapaxes(vals[..., :-1], -1, -2)   # (N, cells, k)
    y = np.swapaxes(vals[..., 1:], -1, -2)
    p = km_ratio(x, y, dt, killed=floor_vals is not None)
    return np.prod(p, axis=-1)


# ---------------------------------------------------------------------------
# rejection sampling

def _spec_grid(spec: BridgeEnsembleSpec, steps: int) -> TimeGrid:
    if spec.floor.finite:
        return spec.floor.path.grid
    return TimeGrid(spec.a, spec.b, steps)


def propose_avoiding(spec: BridgeEnsembleSpec, grid: TimeGrid, size: int, gen: np.random.Generator,
                     correction: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """``size`` proposals of ``k`` independent bridges and their acceptance mask."""
    k = spec.k
    vals = _bridges(grid, spec.x, spec.y, size, gen)
    fv = spec.floor.values_on(grid) if spec.floor.finite else None
    ok = no_touch_values(vals, fv)
    if correction:
        p = np.zeros(size)
        if np.any(ok):
            p[ok] = cell_acceptance(vals[ok], grid.h, fv)
        u = gen.random(size)
        ok = ok & (u < p)
    return vals, ok


def _bridges(grid: TimeGrid, x, y, size: int, gen: np.random.Generator) -> np.ndarray:
    """Independent bridges, shape ``(size, k, m+1)``, from ``x[i]`` to ``y[i]``."""
    k = len(x)
    w = brownian_motion_batch(grid, 0.0, size * k, gen).reshape(size, k, grid.steps + 1)
    return pin_motion(w, grid, np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def sample_avoiding_batch(spec: BridgeEnsembleSpec, size: int, rng: RngLike, steps: int = 100,
                          correction: bool = False, max_attempts: int = 10**6,
                          block: int = 4096) -> Tuple[np.ndarray, int]:
    """``size`` accepted ensembles, shape ``(size, k, m+1)``, and the number of proposals."""
    gen = as_generator(rng)
    grid = _spec_grid(spec, steps)
    out = []
    got = 0
    attempts = 0
    while got < size:
        if attempts >= max_attempts:
            raise RejectionExhausted(
                f"no acceptance after {attempts} attempts (accepted {got}); "
                f"acceptance estimate {got / max(attempts, 1):.3e}", attempts, got)
        m = min(block, max_attempts - attempts)
        vals, ok = propose_avoiding(spec, grid, m, gen, correction)
        hit = np.nonzero(ok)[0]
        need = size - got
        if hit.size >= need:
            attempts += int(hit[need - 1]) + 1
            hit = hit[:need]
        else:
            attempts += m
        out.append(vals[hit])
        got += hit.size
    return np.concatenate(out, axis=0), attempts


def sample_avoiding(spec: BridgeEnsembleSpec, rng: RngLike, max_attempts: int = 10**6,
                    steps: int = 100, correction: bool = False) -> Tuple[List[SampledPath], int]:
    """One ensemble from the avoiding-bridge law, by rejection from independent bridges.

    Returns the ``k`` curves and the number of proposals used. With a finite
    floor the grid is the floor's grid. ``correction=True`` applies the per-cell
    acceptance, making the law exact at the gridpoints.
    """
    gen = as_generator(rng)
    grid = _spec_grid(spec, steps)
    attempts = 0
    block = 1
    while attempts < max_attempts:
        m = min(block, max_attempts - attempts)
        vals, ok = propose_avoiding(spec, grid, m, gen, correction)
        hit = np.nonzero(ok)[0]
        if hit.size:
            attempts += int(hit[0]) + 1
            return [SampledPath(grid, v) for v in vals[hit[0]]], attempts
        attempts += m
        block = min(2 * block, 4096)
    raise RejectionExhausted(
        f"rejection sampler exhausted {max_attempts} attempts; acceptance estimate 0/{attempts}",
        attempts, 0)


# ---------------------------------------------------------------------------
# Gibbs resampling

def gibbs_resample_batch(vals: np.ndarray, grid: TimeGrid, k: int, a: float, b: float,
                         rng: RngLike, max_attempts: int = 10**6, correction: bool = False,
                         floor_vals: Optional[np.ndarray] = None) -> np.ndarray:
    """Resample curves ``1..k`` on ``[a, b]`` for a batch of ensembles ``(N, n, m+1)``.

    Proposals are independent bridges between the current values at ``a`` and
    ``b``. Without correction a proposal is accepted when the curves stay
    ordered at the gridpoints, curve ``k`` above curve ``k+1`` (or above
    ``floor_vals`` when ``k = n``). With correction the acceptance probability is
    the product over resampled cells of the avoidance probability of all ``n``
    curves of the cell, which leaves the per-cell bridge law invariant.
    """
    gen = as_generator(rng)
    vals = np.array(vals, dtype=float, copy=True)
    N, n, _ = vals.shape
    if not 1 <= k <= n:
        raise InvalidInput("need 1 <= k <= n")
    ia, ib = grid.index_of(a), grid.index_of(b)
    if not 0 <= ia < ib <= grid.steps:
        raise InvalidInput("resampling interval must be a proper subinterval of the grid")
    sub = TimeGrid(grid.times[ia], grid.times[ib], ib - ia)
    left = vals[:, :k, ia]
    right = vals[:, :k, ib]
    if np.any(np.diff(left, axis=1) >= 0) or np.any(np.diff(right, axis=1) >= 0):
        raise InvalidInput("boundary values must be strictly decreasing")
    pending = np.arange(N)
    attempts = np.zeros(N, dtype=int)
    while pending.size:
        if attempts[pending].max() >= max_attempts:
            raise RejectionExhausted(
                f"Gibbs resampling exhausted {max_attempts} attempts for {pending.size} ensembles",
                int(attempts.sum()), int(N - pending.size))
        m = pending.size
        w = _bridges_multi(sub, left[pending], right[pending], gen)
        trial = vals[pending][:, :, ia:ib + 1].copy()
        trial[:, :k, :] = w
        if k < n:
            ok = no_touch_values(trial[:, :k + 1, :])
        else:
            fv = None if floor_vals is None else floor_vals[ia:ib + 1]
            ok = no_touch_values(trial, fv)
        if correction:
            p = np.zeros(m)
            if np.any(ok):
                fv_all = None if floor_vals is None else floor_vals[ia:ib + 1]
                p[ok] = cell_acceptance(trial[ok], sub.h, fv_all)
            ok &= gen.random(m) < p
        attempts[pending] += 1
        done = pending[ok]
        vals[done, :k, ia:ib + 1] = w[ok]
        pending = pending[~ok]
    return vals


def _bridges_multi(grid: TimeGrid, x: np.ndarray, y: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Bridges with per-sample endpoints ``x, y`` of shape ``(N, k)``."""
    N, k = x.shape
    w = brownian_motion_batch(grid, 0.0, N * k, gen).reshape(N, k, grid.steps + 1)
    return pin_motion(w, grid, x, y)


def gibbs_resample(ensemble, k: int, interval: Tuple[float, float], rng: RngLike,
                   max_attempts: int = 10**6, correction: bool = False,
                   floor: FloorCurve = NEG_INF) -> List[SampledPath]:
    """Brownian Gibbs resampling of curves ``1..k`` on ``interval``.

    Curves outside ``1..k`` and values outside the open interval are copied
    unchanged. The floor for curve ``k`` is curve ``k+1``, or ``floor`` when
    ``k`` equals the number of curves.
    """
    vals, grid = _as_array(ensemble)
    fv = floor.values_on(grid) if (floor is not None and floor.finite) else None
    out = gibbs_resample_batch(vals[None], grid, k, interval[0], interval[1], rng,
                               max_attempts, correction, fv)[0]
    return [SampledPath(grid, v) for v in out]
