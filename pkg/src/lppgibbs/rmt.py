"""GUE matrices, Hermitian Brownian motion and its eigenvalue process."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import RngLike, TimeGrid, as_generator
from .errors import InvalidInput, NumericalFailure


@dataclass
class HermitianMatrix:
    """Dense Hermitian matrix (``entries`` is ``n x n`` complex)."""

    entries: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.entries, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise InvalidInput("a Hermitian matrix must be square")
        if not np.array_equal(h, h.conj().T):
            raise InvalidInput("matrix is not Hermitian")
        self.entries = h

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in decreasing order."""
        return eigenvalues_desc(self.entries)


@dataclass
class EigenProcess:
    """Decreasing eigenvalues ``values[k-1, i]`` at gridpoint ``i``."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


def gue_batch(n: int, var: float, size: int, gen: np.random.Generator) -> np.ndarray:
    """``size`` GUE_n(var) matrices, shape ``(size, n, n)``.

    Off-diagonal entries are ``N(0, var/2) + i N(0, var/2)``; diagonal entries
    are ``N(0, var)``. The upper triangle is drawn and mirrored.
    """
    if not var > 0:
        raise InvalidInput("GUE variance must be positive")
    s = np.sqrt(var / 2.0)
    re = gen.standard_normal((size, n, n)) * s
    im = gen.standard_normal((size, n, n)) * s
    up = np.triu(re + 1j * im, 1)
    diag = gen.standard_normal((size, n)) * np.sqrt(var)
    h = up + np.conj(np.swapaxes(up, -1, -2))
    idx = np.arange(n)
    h[:, idx, idx] = diag
    return h


def sample_gue(n: int, var: float, rng: RngLike) -> HermitianMatrix:
    return HermitianMatrix(gue_batch(n, var, 1, as_generator(rng))[0])


def eigenvalues_desc(h: np.ndarray) -> np.ndarray:
    """Eigenvalues of a (batch of) Hermitian matrices, sorted decreasingly on the last axis."""
    try:
        ev = np.linalg.eigvalsh(h)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure is rare
        h = np.asarray(h)
        raise NumericalFailure(
            f"eigensolver failed: {exc}; shape={h.shape}, "
            f"max|entry|={np.max(np.abs(h)):.3e}, finite={np.all(np.isfinite(h))}") from exc
    return ev[..., ::-1]


def top_eigensum(h, ell: int) -> float:
    """Sum of the ``ell`` largest eigenvalues."""
    m = h.entries if isinstance(h, HermitianMatrix) else np.asarray(h)
    n = m.shape[-1]
    if not 1 <= ell <= n:
        raise InvalidInput(f"need 1 <= ell <= n={n}")
    ev = eigenvalues_desc(m)
    return ev[..., :ell].sum(axis=-1)


def hbm_eigen_batch(n: int, grid: TimeGrid, size: int, gen: np.random.Generator,
                    start: Optional[np.ndarray] = None) -> np.ndarray:
    """Eigenvalue paths of Hermitian Brownian motion, shape ``(size, n, steps+1)``.

    The matrix at ``grid.a`` is GUE_n(grid.a) (zero when ``grid.a = 0``) unless
    ``start`` is given; each grid step adds an independent GUE_n(h) increment.
    """
    if grid.a < 0:
        raise InvalidInput("Hermitian Brownian motion times must be non-negative")
    if start is not None:
        h = np.array(start, dtype=complex)
    elif grid.a > 0:
        h = gue_batch(n, grid.a, size, gen)
    else:
        h = np.zeros((size, n, n), dtype=complex)
    out = np.empty((size, n, grid.steps + 1))
    out[:, :, 0] = eigenvalues_desc(h)
    for i in range(grid.steps):
        h = h + gue_batch(n, grid.h, size, gen)
        out[:, :, i + 1] = eigenvalues_desc(h)
    return out


def hbm_eigen_process(n: int, grid: TimeGrid, rng: RngLike) -> EigenProcess:
    """Eigenvalues of the accumulated Hermitian Brownian motion at every gridpoint.

    Entries of the motion are ``B(t/2) + i B'(t/2)`` off the diagonal and ``B(t)``
    on it, so its marginal at time ``t`` is GUE_n(t).
    """
    return EigenProcess(grid, hbm_eigen_batch(n, grid, 1, as_generator(rng))[0])


def dyson_scaled_window(n: int, x_lo: float, x_hi: float, steps: int, size: int,
                        gen: np.random.Generator, curves: int = 1) -> tuple:
    """Scaled top curves of the Dyson ensemble on the x-window ``[x_lo, x_hi]``.

    The eigenvalue process of Hermitian Brownian motion is sampled at the times
    ``n + 2 n^{2/3} x`` and transformed like the LPP line ensemble. Returns
    ``(x, values)`` with values of shape ``(size, curves, steps+1)``.
    """
    from .lpp import scale_values, time_of
    left = -0.5 * n ** (1.0 / 3.0)
    if x_lo < left:
        raise InvalidInput(f"x window starts below the left endpoint {left}")
    t0, t1 = time_of([x_lo, x_hi], n)
    xs = np.linspace(x_lo, x_hi, steps + 1)
    grid = TimeGrid(t0, t1, steps)
    ev = hbm_eigen_batch(n, grid, size, gen)
    t = grid.times
    return xs, scale_values(ev[:, :curves, :], t, n)
