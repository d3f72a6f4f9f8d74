import numpy as np
import pytest
from scipy import stats

from lppgibbs.core import RngStream
from lppgibbs.errors import RejectionExhausted
from lppgibbs.tmvn import OrthantTruncatedNormal


def _naive(mean, cov, lower, size, gen):
    """Plain rejection from the untruncated normal."""
    out = []
    while sum(len(o) for o in out) < size:
        x = gen.multivariate_normal(mean, cov, size=200_000)
        out.append(x[np.all(x >= lower, axis=1)])
    return np.concatenate(out)[:size]


def test_one_dimensional_is_truncated_normal():
    tn = OrthantTruncatedNormal([0.5], [[2.0]], [1.0])
    x, att = tn.sample(20_000, RngStream(1).generator)
    assert att >= 20_000 and np.all(x >= 1.0)
    sd = np.sqrt(2.0)
    ref = stats.truncnorm((1.0 - 0.5) / sd, np.inf, loc=0.5, scale=sd)
    assert stats.kstest(x[:, 0], ref.cdf).pvalue > 1e-3


def test_two_dimensional_moments_match_naive_rejection():
    mean = np.array([0.2, -0.3])
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    lower = np.array([0.5, -1.0])
    N = 40_000
    x, _ = OrthantTruncatedNormal(mean, cov, lower).sample(N, RngStream(2).generator)
    y = _naive(mean, cov, lower, N, RngStream(3).generator)
    assert np.all(x >= lower)
    se = np.sqrt(x.var(axis=0) / N + y.var(axis=0) / N)
    assert np.all(np.abs(x.mean(axis=0) - y.mean(axis=0)) < 4 * se)
    for i in range(2):
        assert stats.ks_2samp(x[:, i], y[:, i]).pvalue > 1e-3
    cx, cy = np.cov(x.T)[0, 1], np.cov(y.T)[0, 1]
    assert abs(cx - cy) < 0.05


def test_six_dimensional_rare_region():
    # every bound at 3 sd: probability ~1e-9 or less, far out of reach of naive rejection
    d = 6
    idx = np.arange(d)
    cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    lower = np.full(d, 3.0)
    x, att = OrthantTruncatedNormal(np.zeros(d), cov, lower).sample(5000, RngStream(4).generator)
    assert np.all(x >= lower)
    assert att < 50_000
    # each marginal sits above its bound, yet not much above it
    assert np.all(x.mean(axis=0) < 4.0)


def test_bounds_respected_with_infinite_entries():
    tn = OrthantTruncatedNormal([0.0, 0.0, 0.0], np.eye(3) + 0.2, [-np.inf, 1.0, -np.inf])
    x, _ = tn.sample(1000, RngStream(5).generator)
    assert np.all(x[:, 1] >= 1.0)
    assert np.any(x[:, 0] < -1.0)


def test_exhaustion_raises_with_counts():
    tn = OrthantTruncatedNormal(np.zeros(2), np.eye(2), [0.0, 0.0])
    with pytest.raises(RejectionExhausted) as info:
        tn.sample(10_000, RngStream(6).generator, max_attempts=100)
    assert info.value.attempts == 100
    assert info.value.accepted <= 100
