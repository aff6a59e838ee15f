import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scoresurv import dist, engine

FAMILIES = ["weibull", "lognormal", "loglogistic"]


def scipy_law(family, mu, sigma):
    """Reference distributions of T for the AFT form ``log T = mu + sigma eps``."""
    if family == "lognormal":
        return stats.lognorm(s=sigma, scale=math.exp(mu))
    if family == "loglogistic":
        return stats.fisk(c=1.0 / sigma, scale=math.exp(mu))
    return stats.weibull_min(c=1.0 / sigma, scale=math.exp(mu))


@pytest.mark.parametrize("family", FAMILIES)
def test_against_scipy(family):
    mu, sigma = 1.2, 0.7
    theta = np.array([mu, math.log(sigma)])
    t = np.array([0.3, 1.0, 3.3, 8.0])
    ref = scipy_law(family, mu, sigma)
    np.testing.assert_allclose(dist.cdf(family, theta, t), ref.cdf(t), rtol=1e-10)
    np.testing.assert_allclose(dist.sf(family, theta, t), ref.sf(t), rtol=1e-9)
    np.testing.assert_allclose(dist.pdf(family, theta, t), ref.pdf(t), rtol=1e-10)
    np.testing.assert_allclose(dist.log_sf(family, theta, t), ref.logsf(t), rtol=1e-9)
    assert dist.median(family, theta) == pytest.approx(ref.median(), rel=1e-12)


def test_lognormal_median_example():
    assert dist.sf("lognormal", [0.0, 0.0], 1.0) == pytest.approx(0.5)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("which", ["cdf", "sf", "log_cdf", "log_sf", "log_pdf", "pdf"])
def test_grad_theta_finite_difference(family, which):
    theta = np.array([0.8, -0.4])
    t = np.array([0.5, 2.0, 4.0])
    fn = getattr(dist, which)
    g = dist.grad_theta(family, theta, t, which)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (np.asarray(fn(family, theta + e, t)) - np.asarray(fn(family, theta - e, t))) / (2 * h)
        np.testing.assert_allclose(g[:, j], fd, rtol=1e-5, atol=1e-9)


def test_log_floor_and_weibull_clip():
    theta = np.array([0.0, math.log(0.05)])
    assert dist.log_cdf("lognormal", theta, 1e-3) == pytest.approx(math.log(1e-12))
    assert np.isfinite(dist.log_sf("weibull", theta, 1e6))
    assert np.isfinite(dist.pdf("weibull", theta, 1e6))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        dist.spec("gamma")
    with pytest.raises(ValueError):
        dist.cdf("weibull", [0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        dist.ParamVector.from_constrained(0.0, -1.0)
    with pytest.raises(ValueError):
        dist.grad_theta("weibull", [0.0, 0.0], 1.0, "hazard")


def test_param_vector():
    pv = dist.ParamVector.from_constrained(1.0, 0.5)
    assert pv.sigma == pytest.approx(0.5)
    np.testing.assert_allclose(np.asarray(pv), [1.0, math.log(0.5)])


@pytest.mark.parametrize("family", FAMILIES)
def test_sample_median(family):
    rng = np.random.default_rng(0)
    theta = np.array([1.0, math.log(0.4)])
    x = dist.sample(family, theta, 200_000, rng)
    assert np.median(x) == pytest.approx(dist.median(family, theta), rel=0.01)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(-3, 3), st.floats(-2, 1))
def test_cdf_monotone_and_complementary(family, mu, log_sigma):
    t = np.geomspace(1e-3, 1e3, 60)
    F = dist.cdf(family, [mu, log_sigma], t)
    S = dist.sf(family, [mu, log_sigma], t)
    assert np.all(np.diff(F) >= 0)
    assert np.all((F >= 0) & (F <= 1))
    np.testing.assert_allclose(F + S, 1.0, atol=1e-15)


@pytest.mark.parametrize("family", FAMILIES)
def test_tape_functions_match_arrays(family):
    z = np.linspace(-3, 2, 7)
    sp = dist.spec(family)
    tape = engine.Tape()
    v = tape.leaf(z)
    out = engine.vsum(dist.log_cdf_z(sp, v) + dist.log_sf_z(sp, v) + dist.log_pdf_z(sp, v)
                      + dist.cdf_z(sp, v))
    tape.output = out
    adj = tape.backward()
    h = 1e-6

    def f(zz):
        return float(np.sum(dist.log_cdf_z(sp, zz) + dist.log_sf_z(sp, zz)
                            + dist.log_pdf_z(sp, zz) + dist.cdf_z(sp, zz)))

    fd = np.array([(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(z.size)])
    np.testing.assert_allclose(adj[v.idx], fd, rtol=1e-6)
