"""Dense linear algebra, normal-distribution special functions and moments.

Matrices are plain ``numpy`` arrays. ``SpdMatrix`` wraps a symmetric positive
definite matrix together with its lower Cholesky factor so that solves,
inverses and log-determinants never refactor.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from dnrlm.errors import (
    DimensionMismatch,
    DomainError,
    NoConverge,
    NotPositiveDefinite,
    TooFewDraws,
)

SQRT_2PI = np.sqrt(2.0 * np.pi)
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

PIVOT_RTOL = 1e-12
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """Symmetric positive definite matrix with its Cholesky factor."""

    matrix: np.ndarray
    chol: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def solve(self, b):
        return spd_solve(self, b)

    def inverse(self):
        return spd_inverse(self)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def cholesky(m) -> SpdMatrix:
    """Factor a symmetric matrix, raising ``NotPositiveDefinite`` on failure.

    A pivot (squared diagonal of the factor) at or below ``1e-12`` times the
    largest diagonal entry of ``m`` counts as a failure, so nearly singular
    matrices are rejected rather than silently accepted.
    """
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.any(np.abs(m - m.T) > SYMMETRY_RTOL * scale):
        raise NotPositiveDefinite("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    max_diag = np.max(np.diag(m))
    if max_diag <= 0:
        raise NotPositiveDefinite("non-positive diagonal")
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(chol) ** 2
    if np.any(pivots <= PIVOT_RTOL * max_diag):
        raise NotPositiveDefinite(f"pivot {pivots.min():.3g} below tolerance")
    m.setflags(write=False)
    chol.setflags(write=False)
    return SpdMatrix(m, chol)


def spd_solve(m: SpdMatrix, b):
    b = np.asarray(b, dtype=float)
    if b.shape[0] != m.dim:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix is {m.dim}x{m.dim}")
    return linalg.cho_solve((m.chol, True), b)


def spd_inverse(m: SpdMatrix) -> SpdMatrix:
    inv = spd_solve(m, np.eye(m.dim))
    return cholesky(0.5 * (inv + inv.T))


def log_gamma(x):
    """Natural log of the gamma function for positive arguments."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(np.isnan(x)):
        raise DomainError("log_gamma requires x > 0")
    out = special.gammaln(x)
    return float(out) if out.ndim == 0 else out


def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_log_cdf(x):
    # log_ndtr switches to the asymptotic series in the far left tail
    return special.log_ndtr(x)


def mills_ratio(t):
    """phi(t) / Phi(t), stable for all t."""
    return np.sqrt(2.0 / np.pi) / special.erfcx(-np.asarray(t, dtype=float) / np.sqrt(2.0))


def log_phi_curvature(t):
    """Second derivative of log Phi(t): -r(t) (t + r(t)) with r the Mills ratio.

    Always in [-1, 0]. For t < -40 the sum t + r(t) is evaluated from the
    asymptotic expansion of r to avoid cancellation.
    """
    t = np.asarray(t, dtype=float)
    r = mills_ratio(t)
    s = t + r
    far = t < -40.0
    if np.any(far):
        u = 1.0 / np.square(t[far])
        series = u - 3 * u**2 + 15 * u**3 - 105 * u**4
        denom = 1.0 - series
        s = np.array(s, dtype=float, copy=True)
        s[far] = -t[far] * series / denom
    return -r * np.maximum(s, 0.0)


@dataclass(frozen=True, eq=False)
class CenteredMoments:
    """Mean vector, covariance matrix and componentwise skewness."""

    mu: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray

    @property
    def dim(self):
        return self.mu.shape[0]


def sample_moments(draws) -> CenteredMoments:
    """Sample mean, unbiased covariance and biased componentwise skewness.

    Skewness is ``m3 / m2**1.5`` with ``m_k`` the biased k-th central moment.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 3:
        raise TooFewDraws(f"need at least 3 draws, got {n}")
    mu = x.mean(axis=0)
    dev = x - mu
    sigma = dev.T @ dev / (n - 1)
    m2 = np.mean(dev**2, axis=0)
    m3 = np.mean(dev**3, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = m3 / m2**1.5
    return CenteredMoments(mu, 0.5 * (sigma + sigma.T), gamma)


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    hess: np.ndarray
    iterations: int


def newton_maximize(f, grad, hess, x0, tol=1e-8, max_iter=100, armijo=1e-4):
    """Maximize ``f`` with damped Newton steps and Armijo backtracking.

    Converged means ``max|grad| <= tol`` and a Newton step that is negligible
    relative to ``x``; the second condition keeps iterates that drift to
    infinity along a flat ridge (complete separation) from counting as a
    solution. Falls back to a gradient step when ``-hess`` is not positive
    definite; such an iterate never counts as converged, since there the
    Hessian has typically underflowed far out on the ridge.
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    if not np.isfinite(fx):
        raise DomainError("objective is not finite at the starting point")
    for it in range(max_iter + 1):
        g = grad(x)
        h = hess(x)
        curved = True
        try:
            step = cholesky(-h).solve(g)
        except NotPositiveDefinite:
            curved = False
            step = g / max(1.0, np.max(np.abs(g)))
        gnorm = np.max(np.abs(g)) if g.size else 0.0
        if curved and gnorm <= tol and np.max(np.abs(step), initial=0.0) <= 1e-6 * (1.0 + np.max(np.abs(x), initial=0.0)):
            return NewtonResult(x, fx, g, h, it)
        if it == max_iter:
            break
        slope = float(g @ step)
        # near the optimum f is flat to rounding; do not reject on noise
        noise = 64 * np.finfo(float).eps * (1.0 + abs(fx))
        t = 1.0
        for _ in range(60):
            x_new = x + t * step
            f_new = f(x_new)
            if np.isfinite(f_new) and f_new >= fx + armijo * t * slope - noise:
                break
            t *= 0.5
        else:
            # no ascent possible at machine precision
            if curved and gnorm <= tol:
                return NewtonResult(x, fx, g, h, it)
            break
        x, fx = x_new, f_new
    raise NoConverge(max_iter)
