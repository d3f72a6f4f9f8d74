"""Exact sampling of a multivariate normal restricted to ``{x >= lower}``.

Minimax exponential tilting (Botev, 2017), specialised to one-sided bounds:
coordinates are drawn sequentially along the Cholesky factor from shifted
one-dimensional truncated normals and the draw is accepted against the
saddle-point bound of the log-likelihood ratio, which makes the output exact.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import root
from scipy.special import log_ndtr, ndtri_exp

from .errors import NumericalFailure, RejectionExhausted

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _mills(a):
    """``phi(a) / (1 - Phi(a))`` computed in the log domain."""
    return np.exp(-0.5 * a * a - _LOG_SQRT_2PI - log_ndtr(-a))


class OrthantTruncatedNormal:
    """``N(mean, cov)`` conditioned on ``x >= lower`` componentwise.

    Parameters
    ----------
    mean, cov, lower : array_like
        Mean vector, positive-definite covariance and lower bounds (``-inf`` allowed).
    """

    def __init__(self, mean, cov, lower):
        self.mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        lo = np.asarray(lower, dtype=float) - self.mean
        d = self.mean.size
        # order coordinates by how binding they are (largest standardised bound first)
        self.perm = np.argsort(-lo / np.sqrt(np.diag(cov)), kind="stable")
        S = cov[np.ix_(self.perm, self.perm)]
        L = np.linalg.cholesky(S)
        self.diag = np.diag(L).copy()
        self.L = L / self.diag[:, None]          # unit diagonal
        self.lo = lo[self.perm] / self.diag
        self.d = d
        self.x_star, self.mu_star, self.psi_star = self._saddle()

    # psi(x, mu) = sum_i [log(1 - Phi(l_i - c_i - mu_i)) + mu_i^2/2 - x_i mu_i], x_d = mu_d = 0
    def _psi(self, x, mu):
        c = (self.L - np.eye(self.d)) @ x
        a = self.lo - c - mu
        return float(np.sum(log_ndtr(-a) + 0.5 * mu * mu - x * mu))

    def _grad(self, v):
        d = self.d
        x = np.append(v[:d - 1], 0.0)
        mu = np.append(v[d - 1:], 0.0)
        Lo = self.L - np.eye(d)
        a = self.lo - Lo @ x - mu
        P = _mills(a)
        gx = -mu + Lo.T @ P
        gm = mu - x + P
        return np.concatenate([gx[:d - 1], gm[:d - 1]])

    def _saddle(self):
        d = self.d
        if d == 1:
            return np.zeros(1), np.zeros(1), self._psi(np.zeros(1), np.zeros(1))
        # start from the point of the region closest to the mean along the factor
        x0 = np.zeros(d)
        Lo = self.L - np.eye(d)
        for i in range(d):
            x0[i] = max(self.lo[i] - Lo[i] @ x0, 0.0) + 0.1
        v0 = np.concatenate([x0[:d - 1], np.zeros(d - 1)])
        sol = root(self._grad, v0, method="hybr", tol=1e-12)
        if not sol.success or not np.all(np.isfinite(sol.x)):
            raise NumericalFailure(f"tilting saddle point not found: {sol.message}")
        x = np.append(sol.x[:d - 1], 0.0)
        mu = np.append(sol.x[d - 1:], 0.0)
        return x, mu, self._psi(x, mu)

    def sample(self, size: int, gen: np.random.Generator, max_attempts: int = 10**7):
        """Return ``(samples (size, d), attempts)``."""
        out = []
        got = attempts = 0
        mu = self.mu_star
        while got < size:
            if attempts >= max_attempts:
                raise RejectionExhausted(
                    f"truncated normal: {got} accepted in {attempts} attempts", attempts, got)
            m = min(max(2 * (size - got), 64), max_attempts - attempts)
            z = np.empty((m, self.d))
            logw = np.zeros(m)
            for i in range(self.d):
                c = z[:, :i] @ self.L[i, :i]
                a = self.lo[i] - c - mu[i]
                lsf = log_ndtr(-a)
                u = gen.random(m)
                # inverse tail cdf in the log domain
                z[:, i] = mu[i] - ndtri_exp(np.log(u) + lsf)
                logw += lsf + 0.5 * mu[i] ** 2 - mu[i] * z[:, i]
            excess = logw - self.psi_star
            if np.max(excess) > 1e-6:
                raise NumericalFailure(
                    f"tilting bound violated by {np.max(excess):.3e}; saddle point inaccurate")
            acc = np.log(gen.random(m)) < excess
            hit = np.nonzero(acc)[0]
            need = size - got
            if hit.size >= need:
                attempts += int(hit[need - 1]) + 1
                hit = hit[:need]
            else:
                attempts += m
            out.append(z[hit])
            got += hit.size
        z = np.concatenate(out)
        y = (z @ self.L.T) * self.diag
        x = np.empty_like(y)
        x[:, self.perm] = y
        return self.mean + x, attempts
