"""Semi-discrete Brownian last passage percolation on a uniform time grid.

Lines are indexed ``1..n`` in the public API and ``0..n-1`` internally. A path
on lines ``i..j`` is described by its jump times; between consecutive gridpoints
(a *cell*) each path occupies one line. Maximal multi-path energies are computed
by a dynamic program whose state is the strictly increasing tuple of occupied
lines in the current cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import RngLike, SampledPath, TimeGrid, as_generator
from .errors import InvalidInput


@dataclass
class BrownianField:
    """``n`` independent Brownian motions on ``grid`` (row ``k-1`` is ``B(k, .)``)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.steps + 1:
            raise InvalidInput("field values must have shape (n, steps+1)")
        if self.grid.a != 0.0:
            raise InvalidInput("field grid must start at time 0")
        if np.any(self.values[:, 0] != 0.0):
            raise InvalidInput("every line of the field must start at 0")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    @classmethod
    def sample(cls, n: int, x_max: float, steps: int, rng: RngLike) -> "BrownianField":
        grid = TimeGrid(0.0, x_max, steps)
        gen = as_generator(rng)
        inc = gen.standard_normal((n, steps)) * np.sqrt(grid.h)
        vals = np.zeros((n, steps + 1))
        np.cumsum(inc, axis=1, out=vals[:, 1:])
        return cls(grid, vals)

    @classmethod
    def from_increments(cls, grid: TimeGrid, increments: np.ndarray) -> "BrownianField":
        inc = np.asarray(increments, dtype=float)
        vals = np.zeros((inc.shape[0], inc.shape[1] + 1))
        np.cumsum(inc, axis=1, out=vals[:, 1:])
        return cls(grid, vals)


@dataclass
class UprightPath:
    """Path on lines ``first..last`` (1-based) with gridpoint jump indices.

    ``jumps[m]`` is the gridpoint index at which the path leaves line
    ``first + m``; the path ends at gridpoint ``end``. Jump indices are
    non-decreasing and lie in ``[0, end]``.
    """

    first: int
    last: int
    jumps: Tuple[int, ...]
    end: int

    def __post_init__(self):
        self.jumps = tuple(int(j) for j in self.jumps)
        if self.last < self.first or self.first < 1:
            raise InvalidInput("need 1 <= first <= last")
        if len(self.jumps) != self.last - self.first:
            raise InvalidInput("a path on lines first..last has last-first jumps")
        seq = (0,) + self.jumps + (self.end,)
        if any(u > v for u, v in zip(seq, seq[1:])):
            raise InvalidInput("jump times must be non-decreasing in [0, end]")

    @classmethod
    def from_times(cls, grid: TimeGrid, first: int, last: int, times: Sequence[float], end: float):
        return cls(first, last, tuple(grid.index_of(t) for t in times), grid.index_of(end))

    def line_in_cell(self, cell: int) -> int:
        """1-based line occupied during cell ``[cell, cell+1]``."""
        return self.first + sum(1 for j in self.jumps if j <= cell)

    def occupancy(self) -> np.ndarray:
        return np.array([self.line_in_cell(c) for c in range(self.end)], dtype=int)


@dataclass
class DisjointTuple:
    """``ell`` upright paths whose occupied lines are strictly ordered in every cell.

    Path ``j`` (1-based) runs on lines ``j..n-ell+j``.
    """

    paths: Tuple[UprightPath, ...]
    n: int

    def __post_init__(self):
        self.paths = tuple(self.paths)
        ell = len(self.paths)
        if ell < 1:
            raise InvalidInput("a tuple needs at least one path")
        ends = {p.end for p in self.paths}
        if len(ends) != 1:
            raise InvalidInput("all paths of a tuple end at the same time")
        for j, p in enumerate(self.paths, start=1):
            if p.first != j or p.last != self.n - ell + j:
                raise InvalidInput(f"path {j} must run on lines {j}..{self.n - ell + j}")
        occ = self.occupancy()
        if occ.size and np.any(np.diff(occ, axis=0) <= 0):
            raise InvalidInput("occupied lines must be strictly increasing in every cell")

    @property
    def ell(self) -> int:
        return len(self.paths)

    @property
    def end(self) -> int:
        return self.paths[0].end

    def occupancy(self) -> np.ndarray:
        """Array of shape ``(ell, cells)`` of 1-based occupied lines."""
        return np.array([p.occupancy() for p in self.paths], dtype=int).reshape(self.ell, -1)


def energy(field: BrownianField, path: UprightPath) -> float:
    """Sum over lines ``k`` of ``B(k, x_{k+1}) - B(k, x_k)`` with ``x_first = 0``."""
    if path.last > field.n or path.end > field.grid.steps:
        raise InvalidInput("path leaves the field")
    seq = (0,) + path.jumps + (path.end,)
    total = 0.0
    for m, line in enumerate(range(path.first, path.last + 1)):
        row = field.values[line - 1]
        total += row[seq[m + 1]] - row[seq[m]]
    return float(total)


def tuple_energy(field: BrownianField, tup: DisjointTuple) -> float:
    if tup.n > field.n:
        raise InvalidInput("tuple uses more lines than the field has")
    return float(sum(energy(field, p) for p in tup.paths))


# ---------------------------------------------------------------------------
# dynamic program

@dataclass(frozen=True)
class _StateSpace:
    states: np.ndarray                 # (S, ell) strictly increasing 0-based tuples
    sweeps: Tuple[Tuple[Tuple[np.ndarray, np.ndarray], ...], ...]  # per coord, per level


@lru_cache(maxsize=64)
def _state_space(n: int, ell: int) -> _StateSpace:
    windows = [range(j, n - ell + j + 1) for j in range(ell)]
    states = np.array([c for c in combinations(range(n), ell)
                       if all(c[j] in windows[j] for j in range(ell))], dtype=int).reshape(-1, ell)
    index = {tuple(s): i for i, s in enumerate(states)}
    sweeps = []
    # sweep coordinates in the order ell-1, ..., 0: the resulting prefix max runs
    # over every valid tuple dominated componentwise by the current one
    for j in reversed(range(ell)):
        levels = []
        for v in range(1, n):
            dst, src = [], []
            for i, s in enumerate(states):
                if s[j] != v:
                    continue
                t = list(s)
                t[j] -= 1
                k = index.get(tuple(t))
                if k is not None:
                    dst.append(i)
                    src.append(k)
            if dst:
                levels.append((np.array(dst), np.array(src)))
        sweeps.append(tuple(levels))
    return _StateSpace(states, tuple(sweeps))


class EnergyDP:
    """Streaming maximiser of ``ell``-tuple energies for a batch of fields.

    Call :meth:`step` with the line increments of one cell, shape ``(batch, n)``;
    :attr:`value` then holds the maximal energy up to the current gridpoint.
    """

    def __init__(self, n: int, ell: int, batch: int = 1):
        if not 1 <= ell <= n:
            raise InvalidInput(f"need 1 <= ell <= n, got ell={ell}, n={n}")
        self.n, self.ell = n, ell
        self.space = _state_space(n, ell)
        self.v = np.zeros((batch, len(self.space.states)))

    def step(self, inc: np.ndarray) -> None:
        v = self.v
        if self.ell == 1:
            np.maximum.accumulate(v, axis=1, out=v)
            v += inc
            return
        for levels in self.space.sweeps:
            for dst, src in levels:
                v[:, dst] = np.maximum(v[:, dst], v[:, src])
        # reward of a state: sum of the increments of its occupied lines
        reward = inc[:, self.space.states].sum(axis=2)
        v += reward

    @property
    def value(self) -> np.ndarray:
        return self.v.max(axis=1)


def max_energy_path(field: BrownianField, ell: int) -> np.ndarray:
    """``M^ell`` at every gridpoint of ``field`` (value 0 at time 0)."""
    if ell > field.n:
        raise InvalidInput(f"ell={ell} exceeds the number of lines n={field.n}")
    dp = EnergyDP(field.n, ell, 1)
    inc = field.increments
    out = np.zeros(field.grid.steps + 1)
    for c in range(field.grid.steps):
        dp.step(inc[None, :, c])
        out[c + 1] = dp.value[0]
    return out


def max_energy(field: BrownianField, ell: int, t: Optional[float] = None) -> float:
    """Maximal energy over disjoint ``ell``-tuples ending at gridpoint ``t``.

    Jumps are restricted to gridpoints. Several paths may change line at the
    same gridpoint provided the occupied lines stay strictly ordered in every
    cell; these configurations are limits of admissible tuples and leave the
    supremum unchanged.
    """
    if ell > field.n:
        raise InvalidInput(f"ell={ell} exceeds the number of lines n={field.n}")
    if ell < 1:
        raise InvalidInput("ell must be positive")
    end = field.grid.steps if t is None else field.grid.index_of(t)
    dp = EnergyDP(field.n, ell, 1)
    inc = field.increments
    for c in range(end):
        dp.step(inc[None, :, c])
    return float(dp.value[0])


def brute_force_max_energy(field: BrownianField, ell: int, end: Optional[int] = None) -> float:
    """Exhaustive search over gridpoint jump times; feasible only for tiny grids."""
    n = field.n
    end = field.grid.steps if end is None else end
    per_path = []
    for j in range(1, ell + 1):
        first, last = j, n - ell + j
        opts = []
        for jumps in _nondecreasing(last - first, end):
            opts.append(UprightPath(first, last, jumps, end))
        per_path.append(opts)
    best = -np.inf
    occ_cache = [[p.occupancy() for p in opts] for opts in per_path]
    en_cache = [[energy(field, p) for p in opts] for opts in per_path]
    for combo in _product_indices([len(o) for o in per_path]):
        ok = True
        for j in range(ell - 1):
            if np.any(occ_cache[j][combo[j]] >= occ_cache[j + 1][combo[j + 1]]):
                ok = False
                break
        if ok:
            best = max(best, sum(en_cache[j][combo[j]] for j in range(ell)))
    return float(best)


def _nondecreasing(length: int, top: int) -> Iterable[Tuple[int, ...]]:
    if length == 0:
        yield ()
        return
    from itertools import combinations_with_replacement
    yield from combinations_with_replacement(range(top + 1), length)


def _product_indices(sizes: Sequence[int]):
    from itertools import product
    return product(*[range(s) for s in sizes])


# ---------------------------------------------------------------------------
# line ensemble and scaling

@dataclass
class LPPLineEnsemble:
    """Curves ``L_n(i, .)`` with ``sum_{i<=ell} L_n(i, t) = M^ell(t)``.

    ``partial_sums[ell-1]`` stores ``M^ell`` itself so the identity can be read
    off without re-summation.
    """

    grid: TimeGrid
    values: np.ndarray
    partial_sums: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def curve(self, i: int) -> SampledPath:
        return SampledPath(self.grid, self.values[i - 1])


def line_ensemble(field: BrownianField) -> LPPLineEnsemble:
    """Build ``L_n`` from ``M^ell`` for ``ell = 1..n`` by successive differences."""
    n = field.n
    m = np.array([max_energy_path(field, ell) for ell in range(1, n + 1)])
    vals = np.diff(np.vstack([np.zeros((1, m.shape[1])), m]), axis=0)
    return LPPLineEnsemble(field.grid, vals, m)


@dataclass
class ScaledEnsemble:
    """Curves ``2^{-1/2} n^{-1/3} (L(i, n + 2n^{2/3}x) - 2n - 2n^{2/3}x)`` on an x-grid."""

    n: int
    x: np.ndarray
    values: np.ndarray

    @property
    def left_endpoint(self) -> float:
        return -0.5 * self.n ** (1.0 / 3.0)

    def at(self, i: int, x) -> np.ndarray:
        return np.interp(x, self.x, self.values[i - 1])


def scale_values(lvals, t, n: int):
    """Scaled value of an unscaled value ``lvals`` observed at time ``t``."""
    # centring 2n + 2n^{2/3} x equals n + t
    n13 = n ** (1.0 / 3.0)
    return (np.asarray(lvals) - n - np.asarray(t)) / (np.sqrt(2.0) * n13)


def time_of(x, n: int):
    return n + 2.0 * n ** (2.0 / 3.0) * np.asarray(x, dtype=float)


def x_of(t, n: int):
    return (np.asarray(t, dtype=float) - n) / (2.0 * n ** (2.0 / 3.0))


def scale(ensemble, n: int, x: Optional[Sequence[float]] = None) -> ScaledEnsemble:
    """Apply the KPZ scaling to an ensemble with ``grid`` and ``values`` (curves by row).

    By default the x-grid is the image of the time grid. With an explicit ``x``
    the curves are read off at ``n + 2n^{2/3}x`` by linear interpolation.
    """
    grid = ensemble.grid
    if x is None:
        t = grid.times
        xs = x_of(t, n)
        vals = ensemble.values
    else:
        xs = np.asarray(x, dtype=float)
        left = -0.5 * n ** (1.0 / 3.0)
        if np.any(xs < left - 1e-12):
            raise InvalidInput(f"x below the left endpoint {left}")
        t = time_of(xs, n)
        if np.any(t < grid.a - 1e-9) or np.any(t > grid.b + 1e-9):
            raise InvalidInput("requested x maps outside the ensemble's time range")
        vals = np.array([np.interp(t, grid.times, row) for row in ensemble.values])
    return ScaledEnsemble(n, xs, scale_values(vals, t, n))


def near_geod_deficit(scaled: ScaledEnsemble, k: int, x: float) -> float:
    """``sum_{i=2}^k (L(1,x) - L(i,x))`` on the scaled ensemble.

    ``NearGeod(x, r)`` holds iff this is at most ``2^{-1/2} r``.
    """
    if k < 2:
        raise InvalidInput("near_geod_deficit needs k >= 2")
    if k > scaled.values.shape[0]:
        raise InvalidInput("k exceeds the number of curves")
    top = np.array([scaled.at(i, x) for i in range(1, k + 1)])
    return float(np.sum(top[0] - top[1:]))


def deficit_from_values(top: np.ndarray) -> np.ndarray:
    """Deficit from an array whose last axis holds the top-k scaled values."""
    return np.sum(top[..., :1] - top[..., 1:], axis=-1)


# ---------------------------------------------------------------------------
# batch Monte Carlo

def sample_max_energies(n: int, ells: Sequence[int], x: float, steps: int, size: int,
                        rng: RngLike, coarsen: Sequence[int] = (1,),
                        block: int = 256) -> Dict[int, np.ndarray]:
    """``M^ell(x)`` for ``size`` independent fields, at several resolutions.

    The field is generated at ``steps`` cells; for each factor ``c`` in
    ``coarsen`` the same field restricted to every ``c``-th gridpoint is also
    processed, so results across factors are coupled. Returns a dict mapping
    ``c`` to an array of shape ``(size, len(ells))``.
    """
    for c in coarsen:
        if steps % c:
            raise InvalidInput(f"steps={steps} not divisible by coarsening factor {c}")
    gen = as_generator(rng)
    h = x / steps
    dps = {c: [EnergyDP(n, ell, size) for ell in ells] for c in coarsen}
    acc = {c: np.zeros((size, n)) for c in coarsen}
    lcm = int(np.lcm.reduce(list(coarsen)))
    block = max(lcm, (block // lcm) * lcm)
    done = 0
    while done < steps:
        m = min(block, steps - done)
        inc = gen.standard_normal((m, size, n)) * np.sqrt(h)
        for c in coarsen:
            if c == 1:
                for r in range(m):
                    for dp in dps[c]:
                        dp.step(inc[r])
                continue
            for r in range(m):
                acc[c] += inc[r]
                if (done + r + 1) % c == 0:
                    for dp in dps[c]:
                        dp.step(acc[c])
                    acc[c][:] = 0.0
        done += m
    return {c: np.column_stack([dp.value for dp in dps[c]]) for c in coarsen}
