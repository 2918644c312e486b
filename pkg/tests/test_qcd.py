import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from activeauth.qcd import (
    GaussianKDE,
    InsufficientDataError,
    QcdState,
    ScoreDensityPair,
    cusum_path,
    fit_densities,
    llr,
    qcd_step,
    run_aa,
    silverman_bandwidth,
)


def gauss(mu):
    return lambda x: np.exp(-0.5 * (np.asarray(x) - mu) ** 2) / math.sqrt(2 * math.pi)


def test_closed_form_gaussian_llr():
    d = ScoreDensityPair(gauss(0.0), gauss(2.0), floor=0.0)
    assert abs(llr(d, 2.0) - 2.0) <= 1e-12
    x = np.linspace(-3, 5, 17)
    assert np.allclose(llr(d, x), 2 * x - 2, atol=1e-12)


def test_density_floor_bounds_llr():
    d = ScoreDensityPair(gauss(0.0), gauss(2.0))
    assert llr(d, 50.0) == pytest.approx(math.log(1e-6) - math.log(1e-6))
    assert np.isfinite(llr(d, -40.0))


def test_silverman_bandwidth():
    x = np.random.default_rng(0).normal(size=500)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(sd, iqr / 1.34) * 500**-0.2)
    assert silverman_bandwidth(np.ones(20)) > 0


@pytest.mark.parametrize("seed", range(3))
def test_kde_integrates_to_one(seed):
    x = np.random.default_rng(seed).beta(2, 5, size=200)
    kde = GaussianKDE.fit(x)
    grid = np.linspace(-1, 2, 30001)
    assert abs(np.trapezoid(kde(grid), grid) - 1.0) < 1e-3


def test_fit_densities_requirements():
    ok = np.linspace(0.1, 0.9, 10)
    with pytest.raises(InsufficientDataError):
        fit_densities(ok[:9], ok)
    with pytest.raises(ValueError):
        fit_densities(np.append(ok, 1.0), ok)
    d = fit_densities(ok + 0.05, ok - 0.05)
    assert d.meta["n_genuine"] == 10


def test_step_and_path():
    s = QcdState(threshold=1.0)
    for L in (0.4, -2.0, 0.7, 0.5):
        s = qcd_step(s, L)
    assert s.cumulative == pytest.approx(1.2) and s.detected_at == 4 and s.j == 4
    assert np.allclose(cusum_path([0.4, -2.0, 0.7, 0.5]), [0.4, 0.0, 0.7, 1.2])


@given(st.lists(st.floats(-1e3, 1e3), max_size=50))
def test_clamp_invariant(L):
    c = cusum_path(L)
    assert np.all(c >= 0)
    prev = 0.0
    for v, out in zip(L, c):
        assert out == max(prev + v, 0.0)
        prev = out


def test_run_aa_trace():
    d = ScoreDensityPair(gauss(0.8), gauss(0.2), floor=0.0)
    t = run_aa([(0.8, "genuine"), (0.8, "genuine"), (0.2, "impostor"), (0.2, "impostor")], d, h=0.3)
    assert t.change_point == 2
    assert np.allclose(t.L, [-0.18, -0.18, 0.18, 0.18])
    assert t.detected_at == 4 and t.delay == 2 and not t.false_detection
    with pytest.raises(ValueError):
        run_aa([(0.2, "impostor"), (0.8, "genuine")], d, 1.0)
