"""Monte Carlo estimators, exponent fits, tail checks and closed-form bounds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import kolmogorov

from .core import RngLike, TimeGrid, as_generator
from .errors import InvalidInput
from .jump import little_c

SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# estimates

@dataclass
class EstimateReport:
    """Binomial estimate of one event probability."""

    label: str
    params: Dict[str, float]
    trials: int
    hits: int
    steps: Optional[int] = None
    seed: Optional[int] = None

    @property
    def estimate(self) -> float:
        return self.hits / self.trials

    @property
    def stderr(self) -> float:
        p = self.estimate
        return float(np.sqrt(p * (1.0 - p) / self.trials))

    @property
    def ci(self):
        p, s = self.estimate, self.stderr
        return (p - 1.96 * s, p + 1.96 * s)


def estimate_tail(sampler: Callable[[np.random.Generator, int], np.ndarray],
                  thresholds: Sequence[float], trials: int, rng: RngLike,
                  tail: str = "upper", label: str = "tail", param_name: str = "s",
                  steps: Optional[int] = None, seed: Optional[int] = None) -> List[EstimateReport]:
    """Tail frequencies of a sampled statistic, one report per threshold.

    ``sampler(gen, size)`` returns ``size`` statistics (booleans count as 0/1).
    The upper tail is ``stat >= s``, the lower tail ``stat <= s``.
    """
    if trials <= 0:
        raise InvalidInput("need a positive number of trials")
    if trials < 100:
        raise InvalidInput("tail estimates need at least 100 trials")
    if tail not in ("upper", "lower"):
        raise InvalidInput("tail must be 'upper' or 'lower'")
    x = np.asarray(sampler(as_generator(rng), trials), dtype=float)
    if x.shape != (trials,):
        raise InvalidInput("sampler must return one statistic per trial")
    out = []
    for s in thresholds:
        hit = x >= s if tail == "upper" else x <= s
        out.append(EstimateReport(label, {param_name: float(s)}, trials, int(hit.sum()), steps, seed))
    return out


# ---------------------------------------------------------------------------
# regressions

@dataclass
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float
    r2: float


def ols(x, y) -> LineFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise InvalidInput("a fit needs at least three points")
    res = stats.linregress(x, y)
    return LineFit(float(res.slope), float(res.intercept), float(res.stderr), float(res.rvalue**2))


@dataclass
class ExponentFit:
    """OLS fit of ``log p`` against ``log eps``."""

    eps: np.ndarray
    log_p: np.ndarray
    slope: float
    intercept: float
    slope_stderr: float
    r2: float
    dropped: List[float] = field(default_factory=list)


def fit_power_law(eps, p, weights=None) -> ExponentFit:
    eps = np.asarray(eps, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise InvalidInput("zero probability estimate: use more trials or larger eps")
    lx, ly = np.log(eps), np.log(p)
    if weights is None:
        f = ols(lx, ly)
        return ExponentFit(eps, ly, f.slope, f.intercept, f.slope_stderr, f.r2)
    w = np.asarray(weights, dtype=float)
    X = np.column_stack([np.ones_like(lx), lx])
    W = np.diag(w)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ ly
    resid = ly - X @ beta
    dof = max(lx.size - 2, 1)
    s2 = float(resid @ W @ resid) / dof
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else float("nan")
    return ExponentFit(eps, ly, float(beta[1]), float(beta[0]), float(np.sqrt(s2 * cov[1, 1])), r2)


def fit_exponent(probe: Callable[[float], EstimateReport], eps_list: Sequence[float],
                 min_hits: int = 25, weighted: bool = False) -> ExponentFit:
    """Log-log slope of ``probe(eps).estimate`` over ``eps_list``.

    Points with fewer than ``min_hits`` hits are dropped (listed in ``dropped``);
    any zero estimate is an error, as is having fewer than three usable points.
    """
    reps = [probe(e) for e in eps_list]
    if any(r.hits == 0 for r in reps):
        raise InvalidInput("an estimate is zero: increase trials or use larger eps")
    keep = [i for i, r in enumerate(reps) if r.hits >= min_hits]
    dropped = [float(eps_list[i]) for i in range(len(reps)) if i not in keep]
    if len(keep) < 3:
        raise InvalidInput(f"only {len(keep)} points with >= {min_hits} hits; need 3")
    e = np.array([eps_list[i] for i in keep], dtype=float)
    p = np.array([reps[i].estimate for i in keep])
    w = None
    if weighted:
        # delta method: var(log p) = (1-p)/(n p)
        w = np.array([reps[i].trials * reps[i].estimate / (1 - reps[i].estimate) for i in keep])
    fit = fit_power_law(e, p, w)
    fit.dropped = dropped
    return fit


# ---------------------------------------------------------------------------
# ensemble tools

def modulus_of_continuity(values: np.ndarray, grid: TimeGrid, k: int, interval, delta: float) -> float:
    """Largest ``|E(i, x+s) - E(i, x)|`` over ``i <= k`` and gridpoints ``x, x+s`` in
    ``interval`` with ``0 < s <= delta``."""
    a, b = interval
    if delta > b - a:
        raise InvalidInput("delta exceeds the interval length")
    v = np.asarray(values, dtype=float)[:k]
    t = grid.times
    tol = 1e-12 * (grid.b - grid.a)
    idx = np.nonzero((t >= a - tol) & (t <= b + tol))[0]
    v = v[:, idx]
    lag = int(np.floor(delta / grid.h + 1e-9))
    best = 0.0
    for L in range(1, min(lag, v.shape[1] - 1) + 1):
        best = max(best, float(np.max(np.abs(v[:, L:] - v[:, :-L]))))
    return best


@dataclass(frozen=True)
class ParabolaTools:
    """``Q(x) = x^2/sqrt2`` and its tangent line at ``y``."""

    @staticmethod
    def Q(x):
        return np.asarray(x, dtype=float) ** 2 / SQRT2

    @staticmethod
    def tangent(x, y):
        """``l(x, y) = -y^2/sqrt2 - sqrt2 y (x - y)``."""
        x = np.asarray(x, dtype=float)
        return -(y * y) / SQRT2 - SQRT2 * y * (x - y)


def parabolic_shift(x: np.ndarray, values: np.ndarray, y: float, window=None):
    """``L_shift(i, x) = L(i, x + y) - l(x + y, y)`` on the shifted abscissae ``x - y``.

    Returns ``(x_new, values_new)``; with ``window`` the output is restricted to
    it, and a window not covered by the shifted domain is an error.
    """
    if not np.isfinite(y):
        raise InvalidInput("shift must be finite")
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=float)
    xs = x - y
    out = v - ParabolaTools.tangent(x, y)
    if window is not None:
        lo, hi = window
        tol = 1e-12 * max(1.0, np.ptp(x))
        if lo < xs[0] - tol or hi > xs[-1] + tol:
            raise InvalidInput(f"window {window} leaves the shifted domain [{xs[0]}, {xs[-1]}]")
        sel = (xs >= lo - tol) & (xs <= hi + tol)
        return xs[sel], out[..., sel]
    return xs, out


def bridge_sup_tail(s) -> np.ndarray:
    """``P(sup |B| >= s)`` for a standard Brownian bridge on ``[0, 1]``."""
    return kolmogorov(np.asarray(s, dtype=float))


@dataclass
class BridgeComparison:
    s: float
    ensemble: EstimateReport
    bridge: float
    lower: float
    upper: float

    @property
    def ratio(self) -> float:
        return self.ensemble.estimate / self.bridge


def bridge_compare_tail(sampler: Callable[[np.random.Generator, int], np.ndarray], d: float,
                        s_list: Sequence[float], trials: int, rng: RngLike,
                        seed: Optional[int] = None) -> List[BridgeComparison]:
    """Compare ``P(sup |curve - chord| >= s sqrt(d))`` with the bridge value.

    ``sampler(gen, size)`` returns curves of shape ``(size, m+1)`` on a window of
    length ``d``. The bridge baseline is the exact Kolmogorov tail; the bracket
    ``[e^{-2s^2}, 2e^{-2s^2}]`` is reported alongside.
    """
    if d < 1:
        raise InvalidInput("window length d must be at least 1")
    gen = as_generator(rng)
    curves = np.asarray(sampler(gen, trials), dtype=float)
    m = curves.shape[-1] - 1
    w = np.linspace(0.0, 1.0, m + 1)
    chord = curves[:, :1] + w * (curves[:, -1:] - curves[:, :1])
    stat = np.max(np.abs(curves - chord), axis=1) / np.sqrt(d)
    out = []
    for s in s_list:
        rep = EstimateReport("bridge-compare", {"s": float(s)}, trials, int(np.sum(stat >= s)), m, seed)
        e = float(np.exp(-2.0 * s * s))
        out.append(BridgeComparison(float(s), rep, float(bridge_sup_tail(s)), e, 2 * e))
    return out


# ---------------------------------------------------------------------------
# closed-form bounds

def _lower_curves_bound(t, k, r, c, C):
    E = 20.0 ** (k - 1) * 2.0 ** (k * (k - 1) / 2.0) * 10.0 * C
    return t**k * E * np.exp(-little_c(k, c) * r**1.5)


_BOUNDS = {
    "dip": (("k", "r"), lambda k, r: (1 - 2 * np.exp(-1.0)) ** (-k) * np.exp(-4 * r * r)),
    "ledoux": (("n", "eps", "C", "c"), lambda n, eps, C, c: C * np.exp(-c * n * eps**1.5)),
    "aubrun": (("n", "t", "C", "c"), lambda n, t, C, c: C * np.exp(-c * n * t**1.5)),
    "othereigen": (("n", "t", "H", "h"), lambda n, t, H, h: H * np.exp(-h * n * t**1.5)),
    "bridge-closeness": (("k", "phi"), lambda k, phi: 4258.0 * 36.0 ** (k * k) * (k * k - 1.0) ** (k * k)
                         * phi ** (k * k - 1) * np.log(1.0 / phi) ** (k * k / 2.0)),
    "weakbound": (("eps", "K"), lambda eps, K: eps ** (K * K / 18432.0)),
    "bbmodcon": (("R", "delta"), lambda R, delta: 3.0 * np.exp(-R * R / (delta * 1152.0))),
    "lowercurves": (("t", "k", "r", "c", "C"), _lower_curves_bound),
    "jumpaccept-log": (("k", "d_ip", "D_k", "eps"),
                       lambda k, d_ip, D_k, eps: -3973.0 * k**3.5 * d_ip**2 * D_k**2
                       * np.log(1.0 / eps) ** (2.0 / 3.0)),
}


def paper_bound(name: str, **params) -> float:
    """Evaluate a named closed-form bound.

    Names and parameters: ``dip(k, r)``, ``ledoux(n, eps, C, c)``,
    ``aubrun(n, t, C, c)``, ``othereigen(n, t, H, h)``, ``bridge-closeness(k, phi)``,
    ``weakbound(eps, K)``, ``bbmodcon(R, delta)``, ``lowercurves(t, k, r, c, C)``
    and ``jumpaccept-log(k, d_ip, D_k, eps)`` (a natural logarithm, since the
    bound itself underflows). Existential constants are caller-supplied.
    """
    if name not in _BOUNDS:
        raise InvalidInput(f"unknown bound {name!r}; known: {sorted(_BOUNDS)}")
    keys, fn = _BOUNDS[name]
    missing = [k for k in keys if k not in params]
    extra = [k for k in params if k not in keys]
    if missing or extra:
        raise InvalidInput(f"bound {name!r} takes {keys}; missing {missing}, unexpected {extra}")
    return float(fn(**{k: params[k] for k in keys}))


def bound_names() -> List[str]:
    return sorted(_BOUNDS)


# ---------------------------------------------------------------------------
# regularity

@dataclass
class TailCurve:
    z: float
    side: str
    reports: List[EstimateReport]
    fit: Optional[LineFit]

    @property
    def monotone(self) -> bool:
        p = [r.estimate for r in self.reports]
        return all(a >= b for a, b in zip(p, p[1:]))


@dataclass
class RegularityReport:
    n: int
    left_endpoint: float
    rs1: bool
    curves: List[TailCurve]


def tail_decay_fit(s, reports: Sequence[EstimateReport]) -> Optional[LineFit]:
    """Regress ``-log p`` on ``s^{3/2}`` over thresholds with a positive estimate."""
    s = np.asarray(s, dtype=float)
    p = np.array([r.estimate for r in reports])
    ok = p > 0
    if ok.sum() < 3:
        return None
    return ols(s[ok] ** 1.5, -np.log(p[ok]))


def auto_thresholds(x: np.ndarray, side: str, count: int = 4, min_hits: int = 50) -> np.ndarray:
    """``count`` equally spaced non-negative thresholds spanning the observable tail.

    The range runs from the median (or 0) out to where a sample of the size of
    ``x`` still has ``min_hits`` hits.
    """
    x = np.sort(np.asarray(x, dtype=float))
    q = min_hits / x.size
    if side == "upper":
        lo, hi = max(0.0, np.quantile(x, 0.5)), np.quantile(x, 1.0 - q)
    else:
        lo, hi = max(0.0, -np.quantile(x, 0.5)), -np.quantile(x, q)
    if not hi > lo:
        raise InvalidInput(f"{side} tail too thin for {x.size} samples")
    return np.linspace(lo, hi, count)


def check_regularity(onepoint: Callable[[float, np.random.Generator, int], np.ndarray], n: int,
                     z_list: Sequence[float], s_lower: Optional[Sequence[float]],
                     s_upper: Optional[Sequence[float]], trials: int, rng: RngLike, c: float = 0.5,
                     phi1: float = 1.0 / 3.0, left_endpoint: Optional[float] = None,
                     seed: Optional[int] = None, pilot: int = 0) -> RegularityReport:
    """Empirical check of the three regularity axioms for a scaled ensemble.

    ``onepoint(z, gen, size)`` samples the top curve at ``z``. The left-endpoint
    axiom is structural: the domain starts at ``-n^{1/3}/2 <= -c n^{phi1}``. The
    tail axioms are probed through ``P(L(1,z) + z^2/sqrt2 <= -s)`` and
    ``P(L(1,z) + z^2/sqrt2 >= s)``, each with its ``s^{3/2}`` decay fit. A
    threshold list given as ``None`` is chosen per ``z`` by
    :func:`auto_thresholds` from an independent pilot sample of size ``pilot``
    (scaled so the main run has at least 50 hits at the last threshold).
    """
    gen = as_generator(rng)
    left = -0.5 * n ** (1.0 / 3.0) if left_endpoint is None else left_endpoint
    rs1 = bool(left <= -c * n**phi1 + 1e-12)
    curves = []
    for z in z_list:
        if s_lower is None or s_upper is None:
            m = pilot or max(trials // 5, 100)
            xp = np.asarray(onepoint(z, gen, m), dtype=float) + z * z / SQRT2
            hits = max(5, int(round(50 * m / trials)))
            sl = auto_thresholds(xp, "lower", min_hits=hits) if s_lower is None else s_lower
            su = auto_thresholds(xp, "upper", min_hits=hits) if s_upper is None else s_upper
        else:
            sl, su = s_lower, s_upper
        x = np.asarray(onepoint(z, gen, trials), dtype=float) + z * z / SQRT2
        lo = [EstimateReport("lower-tail", {"z": z, "s": float(s)}, trials, int(np.sum(x <= -s)), None, seed)
              for s in sl]
        hi = [EstimateReport("upper-tail", {"z": z, "s": float(s)}, trials, int(np.sum(x >= s)), None, seed)
              for s in su]
        curves.append(TailCurve(z, "lower", lo, tail_decay_fit(sl, lo)))
        curves.append(TailCurve(z, "upper", hi, tail_decay_fit(su, hi)))
    return RegularityReport(n, left, rs1, curves)
