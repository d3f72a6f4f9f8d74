"""Grids, reproducible random streams, Brownian sampling and Gaussian formulas."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .errors import InvalidInput

SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``a + i*h`` for ``i = 0..steps`` with ``h = (b - a)/steps``."""

    a: float
    b: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise InvalidInput(f"TimeGrid needs a < b, got a={self.a}, b={self.b}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidInput(f"TimeGrid needs steps >= 1, got {self.steps}")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.a + np.arange(self.steps + 1) * self.h

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the gridpoint equal to ``t`` (up to ``tol`` cells); error otherwise."""
        u = (t - self.a) / self.h
        i = int(round(u))
        if abs(u - i) > tol or i < 0 or i > self.steps:
            raise InvalidInput(f"time {t} is not a gridpoint of {self}")
        return i

    def contains(self, t: float) -> bool:
        return self.a - 1e-12 * abs(self.b - self.a) <= t <= self.b + 1e-12 * abs(self.b - self.a)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.a, self.b, self.steps * int(factor))


@dataclass
class SampledPath:
    """A curve known at the gridpoints of ``grid`` and linear in between."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.steps + 1,):
            raise InvalidInput(
                f"SampledPath needs {self.grid.steps + 1} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInput("SampledPath values must be finite")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.grid.a - 1e-12) or np.any(t > self.grid.b + 1e-12):
            raise InvalidInput("evaluation time outside the path's interval")
        return np.interp(t, self.grid.times, self.values)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


class RngStream:
    """Counter-based random stream indexed by ``(master_seed, stream_index)``.

    Draws come from a Philox generator keyed by a ``SeedSequence`` whose spawn key
    is the stream index, so distinct indices give independent streams and the
    output depends only on the pair and on how many values were drawn.
    """

    def __init__(self, master_seed: int, stream_index: int = 0):
        if master_seed < 0 or master_seed >= 2**64:
            raise InvalidInput("master_seed must be a 64-bit unsigned integer")
        if stream_index < 0:
            raise InvalidInput("stream_index must be non-negative")
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        """Stream with a derived index; used for per-chunk streams in batch work."""
        return RngStream(self.master_seed, _derive_index(self.stream_index, index))

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_index={self.stream_index})"


def _derive_index(parent: int, index: int) -> int:
    # Cantor pairing keeps derived indices distinct for distinct (parent, index)
    s = parent + index
    return s * (s + 1) // 2 + index + 1


RngLike = Union[RngStream, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Accept an RngStream, a numpy Generator or an integer seed."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise InvalidInput("an explicit random stream is required")
    return RngStream(int(rng)).generator


@dataclass(frozen=True)
class GaussianLaw:
    """Normal law with mean ``m`` and variance ``var``."""

    m: float
    var: float

    def __post_init__(self):
        if not self.var >= 0:
            raise InvalidInput("variance must be non-negative")

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.var))

    def pdf(self, x):
        return gaussian_density(x, self.m, self.var)

    def sf(self, x):
        """P(X > x)."""
        if self.var == 0:
            return (np.asarray(x) < self.m).astype(float)
        return stats.norm.sf(x, loc=self.m, scale=self.sd)


def gaussian_density(x, m: float = 0.0, var: float = 1.0):
    """Density g_{m,var} of the normal law."""
    x = np.asarray(x, dtype=float)
    return np.exp(-((x - m) ** 2) / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


# ---------------------------------------------------------------------------
# Brownian motion and bridge

def brownian_motion_batch(grid: TimeGrid, start, size: int, gen: np.random.Generator) -> np.ndarray:
    """``size`` Brownian paths on ``grid``; array of shape ``(size, steps+1)``."""
    inc = gen.standard_normal((size, grid.steps)) * np.sqrt(grid.h)
    out = np.empty((size, grid.steps + 1))
    out[:, 0] = 0.0
    np.cumsum(inc, axis=1, out=out[:, 1:])
    start = np.asarray(start, dtype=float)
    out += start[..., None] if start.ndim else start
    return out


def brownian_bridge_batch(grid: TimeGrid, x, y, size: int, gen: np.random.Generator) -> np.ndarray:
    """Bridges from ``x`` at ``a`` to ``y`` at ``b``, exact at gridpoints.

    ``x`` and ``y`` may be scalars or arrays broadcastable to ``size``. The last
    axis indexes the gridpoints; endpoint values are written exactly.
    """
    w = brownian_motion_batch(grid, 0.0, size, gen)
    return pin_motion(w, grid, x, y)


def pin_motion(w: np.ndarray, grid: TimeGrid, x, y) -> np.ndarray:
    """Map motions started at 0 to bridges by the pinning transform."""
    frac = (grid.times - grid.a) / (grid.b - grid.a)
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    out = x + w - frac * (w[..., -1:] - (y - x))
    out[..., 0] = x[..., 0]
    out[..., -1] = y[..., 0]
    return out


def sample_brownian_motion(grid: TimeGrid, start: float, rng: RngLike) -> SampledPath:
    """Standard Brownian motion on ``grid`` started from ``start`` at ``grid.a``."""
    vals = brownian_motion_batch(grid, float(start), 1, as_generator(rng))[0]
    vals[0] = start
    return SampledPath(grid, vals)


def sample_brownian_bridge(grid: TimeGrid, x: float, y: float, rng: RngLike) -> SampledPath:
    """Brownian bridge from ``x`` at ``grid.a`` to ``y`` at ``grid.b``."""
    return SampledPath(grid, brownian_bridge_batch(grid, x, y, 1, as_generator(rng))[0])


def affine_to_standard(path: SampledPath) -> SampledPath:
    """Subtract the chord through the endpoint values: f - ((b-x)f(a) + (x-a)f(b))/(b-a)."""
    g = path.grid
    t = g.times
    v = path.values
    chord = ((g.b - t) * v[0] + (t - g.a) * v[-1]) / (g.b - g.a)
    out = v - chord
    out[0] = 0.0
    out[-1] = 0.0
    return SampledPath(g, out)


def pinned_conditional_gaussian(l1: float, a: float, b: float, l2: float, z, j, k: int = 1,
                                r: Optional[Sequence[float]] = None, y=None) -> GaussianLaw:
    """Conditional law of the value at ``a`` of a (k-curve) bridge on ``[l1, l2]``.

    Curves are independent bridges from ``y`` at ``l1`` to ``z`` at ``l2``. Conditioning
    is on the increments over ``[a, b]`` being ``j`` and, for ``k > 1``, on the gaps at
    ``a`` being those of ``r``. The returned law is that of the lowest curve's value at
    ``a``: precision ``k((a-l1)^-1 + (l2-b)^-1)`` and mean

        r_k - mean(r) + (a-l1)/S * (mean(z) - mean(j)) + (l2-b)/S * mean(y),

    with ``S = (a-l1) + (l2-b)``. For ``k = 1`` and ``y = 0`` the mean reduces to
    ``(z - j)/(l2 - b) * var``.
    """
    if not (l1 < a < b < l2):
        if a == l1 or b == l2:
            raise InvalidInput("degenerate interval: need l1 < a and b < l2")
        raise InvalidInput("need l1 < a < b < l2")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    j = np.atleast_1d(np.asarray(j, dtype=float))
    y = np.zeros(k) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
    r = np.zeros(k) if r is None else np.atleast_1d(np.asarray(r, dtype=float))
    for name, v in (("z", z), ("j", j), ("y", y), ("r", r)):
        if v.shape not in ((1,), (k,)):
            raise InvalidInput(f"{name} must be a scalar or a {k}-vector")
    z, j, y, r = (np.broadcast_to(v, (k,)) for v in (z, j, y, r))
    left, right = a - l1, l2 - b
    s = left + right
    var = 1.0 / (k * (1.0 / left + 1.0 / right))
    m = r[-1] - r.mean() + left / s * (z.mean() - j.mean()) + right / s * y.mean()
    return GaussianLaw(float(m), float(var))


def bridge_fdd_density(x: float, y: float, a: float, b: float, times: Sequence[float],
                       values: Sequence[float]) -> float:
    """Joint density of a bridge from ``x`` to ``y`` on ``[a, b]`` at the given times.

    Product of Gaussian transition densities along ``a < t_1 < ... < t_l < b``
    divided by the end-to-end density ``g_{0,b-a}(y - x)``.
    """
    t = np.asarray(times, dtype=float).ravel()
    z = np.asarray(values, dtype=float).ravel()
    if t.shape != z.shape:
        raise InvalidInput("times and values must have equal length")
    if t.size == 0:
        return 1.0
    tt = np.concatenate(([a], t, [b]))
    if np.any(np.diff(tt) <= 0):
        raise InvalidInput("times must satisfy a < t_1 < ... < t_l < b")
    zz = np.concatenate(([x], z, [y]))
    dt = np.diff(tt)
    dz = np.diff(zz)
    log_num = np.sum(-dz**2 / (2 * dt) - 0.5 * np.log(2 * np.pi * dt))
    log_den = -(y - x) ** 2 / (2 * (b - a)) - 0.5 * np.log(2 * np.pi * (b - a))
    return float(np.exp(log_num - log_den))


def gaussian_tail_bounds(t: float):
    """Bounds on the standard normal tail ``P(N > t)``.

    Returns ``(lower, upper)`` with ``upper = e^{-t^2/2}/(t sqrt(2 pi))`` and
    ``lower = e^{-t^2/2}/(2 t sqrt(2 pi))``; ``lower`` is ``None`` for ``t < 1``
    where it is not claimed. At ``t = 0`` the upper bound is ``inf``.
    """
    if t < 0:
        raise InvalidInput("t must be non-negative")
    if t == 0:
        return None, float("inf")
    e = np.exp(-t * t / 2) / SQRT_2PI
    upper = float(e / t)
    lower = float(e / (2 * t)) if t >= 1 else None
    return lower, upper


def log_conditional_tail_ratio(s, r: float, law: GaussianLaw = GaussianLaw(0.0, 1.0)):
    """``s -> log P(X > s + r) - log P(X > s)`` for ``X`` with the given normal law.

    The log form keeps strict monotonicity visible where the ratio itself rounds to 1.
    """
    s = np.asarray(s, dtype=float)
    z0 = (s - law.m) / law.sd
    z1 = (s + r - law.m) / law.sd
    return stats.norm.logsf(z1) - stats.norm.logsf(z0)


def conditional_tail_ratio(s, r: float, law: GaussianLaw = GaussianLaw(0.0, 1.0)):
    """``s -> P(X > s + r)/P(X > s)`` for ``X`` with the given normal law."""
    return np.exp(log_conditional_tail_ratio(s, r, law))
