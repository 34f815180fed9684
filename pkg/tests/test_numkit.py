import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import random_spd
from dnrlm.errors import DimensionMismatch, DomainError, NoConverge, NotPositiveDefinite, TooFewDraws
from dnrlm.numkit import (
    cholesky,
    log_gamma,
    log_phi_curvature,
    mills_ratio,
    newton_maximize,
    sample_moments,
    spd_inverse,
    spd_solve,
    std_normal_cdf,
    std_normal_log_cdf,
    std_normal_pdf,
)


def test_cholesky_reconstructs(rng):
    for p in (1, 2, 5, 9):
        m = random_spd(rng, p)
        c = cholesky(m)
        np.testing.assert_allclose(c.chol @ c.chol.T, m, rtol=1e-12, atol=1e-12)
        assert np.allclose(np.triu(c.chol, 1), 0)


def test_cholesky_known_factor():
    c = cholesky([[4.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(c.chol, [[2.0, 0.0], [1.0, math.sqrt(2.0)]])
    assert c.logdet() == pytest.approx(math.log(8.0))


@pytest.mark.parametrize("bad", [
    [[1.0, 2.0], [2.0, 1.0]],          # indefinite
    [[1.0, 1.0], [1.0, 1.0]],          # singular
    [[1.0, 0.5], [0.4, 1.0]],          # asymmetric
    [[0.0, 0.0], [0.0, 0.0]],
    [[1.0, np.nan], [np.nan, 1.0]],
])
def test_cholesky_rejects(bad):
    with pytest.raises(NotPositiveDefinite):
        cholesky(bad)


def test_cholesky_rejects_near_singular():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 1.0 - 1e-14], [1.0 - 1e-14, 1.0]])


def test_cholesky_shape():
    with pytest.raises(DimensionMismatch):
        cholesky(np.ones((2, 3)))


def test_solve_and_inverse(rng):
    m = random_spd(rng, 4)
    c = cholesky(m)
    b = rng.standard_normal(4)
    np.testing.assert_allclose(m @ spd_solve(c, b), b, atol=1e-12)
    np.testing.assert_allclose(spd_inverse(c).matrix @ m, np.eye(4), atol=1e-10)
    with pytest.raises(DimensionMismatch):
        spd_solve(c, np.ones(3))


def test_log_gamma_matches_mpmath():
    for x in (1e-3, 0.5, 1.0, 2.5, 17.3, 1e4):
        assert log_gamma(x) == pytest.approx(float(mpmath.loggamma(x)), rel=1e-13, abs=1e-14)
    with pytest.raises(DomainError):
        log_gamma(0.0)
    with pytest.raises(DomainError):
        log_gamma(-1.5)


def test_normal_functions_match_mpmath():
    for x in (-8.0, -1.3, 0.0, 0.7, 5.0):
        assert std_normal_pdf(x) == pytest.approx(float(mpmath.npdf(x)), rel=1e-14)
        assert std_normal_cdf(x) == pytest.approx(float(mpmath.ncdf(x)), rel=1e-13)


@pytest.mark.parametrize("x", [-30.0, -40.0, -200.0, -3.0, 0.0, 4.0])
def test_log_cdf_far_tail(x):
    oracle = float(mpmath.log(mpmath.ncdf(x)))
    assert std_normal_log_cdf(x) == pytest.approx(oracle, rel=1e-12, abs=1e-300)


def test_log_cdf_minus_30_value():
    # mpmath at 50 digits: log Phi(-30) = -454.3212439955...
    with mpmath.workdps(50):
        oracle = float(mpmath.log(mpmath.ncdf(-30)))
    assert std_normal_log_cdf(-30.0) == pytest.approx(oracle, rel=1e-12)
    assert np.isfinite(std_normal_log_cdf(-1e5))


@pytest.mark.parametrize("t", [-60.0, -41.0, -39.0, -10.0, -1.0, 0.0, 2.0, 10.0])
def test_mills_and_curvature_against_mpmath(t):
    with mpmath.workdps(60):
        r = mpmath.npdf(t) / mpmath.ncdf(t)
        curv = -r * (t + r)
    assert mills_ratio(t) == pytest.approx(float(r), rel=1e-12)
    assert log_phi_curvature(t) == pytest.approx(float(curv), rel=1e-7, abs=1e-15)


@given(st.floats(-1e6, 1e6, allow_nan=False))
@settings(max_examples=300, deadline=None)
def test_curvature_in_range(t):
    c = float(log_phi_curvature(t))
    assert -1.0 <= c <= 0.0


def test_sample_moments_known():
    x = np.array([[0.0], [1.0], [2.0], [10.0]])
    m = sample_moments(x)
    assert m.mu[0] == pytest.approx(3.25)
    assert m.sigma[0, 0] == pytest.approx(np.var(x, ddof=1))
    assert m.gamma[0] == pytest.approx(stats.skew(x[:, 0], bias=True))
    with pytest.raises(TooFewDraws):
        sample_moments(x[:2])


def test_newton_quadratic(rng):
    a = random_spd(rng, 3)
    b = rng.standard_normal(3)
    res = newton_maximize(lambda x: -0.5 * x @ a @ x + b @ x, lambda x: -a @ x + b, lambda x: -a, np.zeros(3))
    np.testing.assert_allclose(res.x, np.linalg.solve(a, b), atol=1e-12)
    assert res.iterations <= 2


def test_newton_nonconcave_start():
    # f = -x^4/4 + x^2/2 has -H not PD at 0: gradient fallback then Newton
    f = lambda x: float(-x[0] ** 4 / 4 + x[0] ** 2 / 2)
    g = lambda x: np.array([-x[0] ** 3 + x[0]])
    h = lambda x: np.array([[-3 * x[0] ** 2 + 1]])
    res = newton_maximize(f, g, h, [0.2])
    assert res.x[0] == pytest.approx(1.0, abs=1e-9)


def test_newton_unbounded_raises():
    f = lambda x: float(-np.logaddexp(0, -x[0]))  # increases without a max
    g = lambda x: np.array([1 / (1 + np.exp(x[0]))])
    h = lambda x: np.array([[-np.exp(x[0]) / (1 + np.exp(x[0])) ** 2]])
    with pytest.raises(NoConverge):
        newton_maximize(f, g, h, [0.0], max_iter=30)


# --- worked examples and invariants -------------------------------------

def test_documented_factor_examples():
    np.testing.assert_array_equal(cholesky(np.eye(3)).chol, np.eye(3))
    np.testing.assert_array_equal(cholesky([[4.0, 0.0], [0.0, 9.0]]).chol, [[2.0, 0.0], [0.0, 3.0]])
    np.testing.assert_allclose(spd_solve(cholesky(np.eye(2)), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_allclose(spd_solve(cholesky([[2.0, 0.0], [0.0, 4.0]]), [2.0, 4.0]), [1.0, 1.0])
    np.testing.assert_allclose(spd_inverse(cholesky(np.eye(4))).matrix, np.eye(4))
    np.testing.assert_allclose(spd_inverse(cholesky([[2.0, 0.0], [0.0, 4.0]])).matrix, [[0.5, 0.0], [0.0, 0.25]])


def test_solve_residual_and_inverse_oracles(rng):
    for _ in range(20):
        m = random_spd(rng, 5)
        c = cholesky(m)
        b = rng.standard_normal(5)
        x = spd_solve(c, b)
        assert np.linalg.norm(m @ x - b) / np.linalg.norm(b) < 1e-9
        assert np.max(np.abs(spd_inverse(c).matrix @ m - np.eye(5))) < 1e-9
        assert np.max(np.abs(c.chol @ c.chol.T - m) / np.abs(m).max()) < 1e-10


def test_log_gamma_examples():
    assert log_gamma(1.0) == 0.0
    assert log_gamma(5.0) == pytest.approx(3.1780538303, abs=1e-10)
    assert log_gamma(0.5) == pytest.approx(0.5723649429, abs=1e-10)


@given(st.floats(0.5, 100.0))
def test_log_gamma_recurrence(x):
    assert np.exp(log_gamma(x + 1)) == pytest.approx(x * np.exp(log_gamma(x)), rel=1e-10)


def test_pdf_cdf_examples():
    assert std_normal_pdf(0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert std_normal_cdf(0.0) == 0.5
    x = np.linspace(-8, 8, 161)
    np.testing.assert_allclose(std_normal_cdf(x) + std_normal_cdf(-x), 1.0, atol=1e-14)


def test_sample_moment_examples(rng):
    m = sample_moments(np.array([[0.0], [1.0], [2.0]]))
    assert (m.mu[0], m.sigma[0, 0], m.gamma[0]) == (1.0, 1.0, 0.0)
    m2 = sample_moments(np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]]))
    assert m2.sigma[0, 1] == pytest.approx(1.0)
    assert abs(sample_moments(rng.standard_normal((1000000, 1))).gamma[0]) < 0.01


def test_sample_moments_affine(rng):
    x = rng.exponential(size=(2000, 3))
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal(3)
    m, mt = sample_moments(x), sample_moments(x @ a.T + b)
    np.testing.assert_allclose(mt.mu, a @ m.mu + b, atol=1e-9)
    np.testing.assert_allclose(mt.sigma, a @ m.sigma @ a.T, atol=1e-9)
    ms = sample_moments(x * np.array([2.0, 0.5, 7.0]) + 3.0)
    np.testing.assert_allclose(ms.gamma, m.gamma, rtol=1e-9)
