"""Multivariate skew-normal likelihood model.

Density of SN(xi, Omega, alpha)::

    2 * N_p(theta; xi, Omega) * Phi(alpha' w^{-1} (theta - xi)),   w = sqrt(diag(Omega))

Parameters are estimated from draws by moment matching in the centered
parametrization (mean, covariance, componentwise skewness). That map is only
invertible inside an admissible region; see ``params_from_moments``.
"""
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from dnrlm.errors import (
    DimensionMismatch,
    FitFailed,
    Inadmissible,
    InadmissibleDelta,
    InadmissibleSkewness,
    NotPositiveDefinite,
    ScaleNotPd,
    TooFewDraws,
)
from dnrlm.numkit import (
    LOG_SQRT_2PI,
    CenteredMoments,
    cholesky,
    log_phi_curvature,
    mills_ratio,
    newton_maximize,
    sample_moments,
    std_normal_log_cdf,
)

B = np.sqrt(2.0 / np.pi)
# sup of |skewness| over the family, reached as |delta| -> 1
MAX_SKEWNESS = (4.0 - np.pi) / 2.0 * B**3 / (1.0 - B**2) ** 1.5
DELTA_MARGIN = 1e-6
CLIP_SKEWNESS = 0.99
CLIP_DELTA_MARGIN = 1e-3


@dataclass(frozen=True, eq=False)
class SnParams:
    """Location ``xi``, scale matrix ``omega`` and shape ``alpha``."""

    xi: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        p = xi.shape[0]
        if alpha.shape != (p,) or omega.shape != (p, p):
            raise DimensionMismatch(f"inconsistent shapes xi{xi.shape} omega{omega.shape} alpha{alpha.shape}")
        try:
            spd = cholesky(omega)
        except NotPositiveDefinite as exc:
            raise ScaleNotPd(str(exc)) from None
        for a in (xi, alpha):
            a.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "omega", spd.matrix)
        object.__setattr__(self, "_spd", spd)

    @property
    def dim(self):
        return self.xi.shape[0]

    @property
    def omega_spd(self):
        return self._spd

    @cached_property
    def omega_diag(self):
        """Vector of marginal scales, sqrt(diag(Omega))."""
        return np.sqrt(np.diag(self.omega))

    @cached_property
    def omega_bar(self):
        w = self.omega_diag
        return self.omega / np.outer(w, w)

    @cached_property
    def omega_inv(self):
        return self._spd.inverse().matrix

    @cached_property
    def lam(self):
        """Slant vector on the original scale: alpha / w."""
        return self.alpha / self.omega_diag

    @cached_property
    def delta(self):
        ob_a = self.omega_bar @ self.alpha
        return ob_a / np.sqrt(1.0 + self.alpha @ ob_a)

    def to_dict(self):
        return {"xi": self.xi.tolist(), "omega": self.omega.tolist(), "alpha": self.alpha.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["xi"], dtype=float), np.array(d["omega"], dtype=float), np.array(d["alpha"], dtype=float))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _as_points(theta, p):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != p:
        raise DimensionMismatch(f"theta has dim {theta.shape[-1]}, params have {p}")
    return theta


def sn_log_pdf(theta, params: SnParams):
    """Log density at one point (p,) or at each row of an (n, p) array."""
    theta = _as_points(theta, params.dim)
    d = theta - params.xi
    quad = np.sum((d @ params.omega_inv) * d, axis=-1)
    out = (
        np.log(2.0)
        - params.dim * LOG_SQRT_2PI
        - 0.5 * params.omega_spd.logdet()
        - 0.5 * quad
        + std_normal_log_cdf(d @ params.lam)
    )
    return float(out) if np.ndim(out) == 0 else out


def sn_log_pdf_grad(theta, params: SnParams):
    theta = _as_points(theta, params.dim)
    d = theta - params.xi
    t = d @ params.lam
    return -params.omega_inv @ d + params.lam * mills_ratio(t)


def sn_log_pdf_hess(theta, params: SnParams):
    theta = _as_points(theta, params.dim)
    t = (theta - params.xi) @ params.lam
    return -params.omega_inv + log_phi_curvature(t) * np.outer(params.lam, params.lam)


def sn_mode(params: SnParams, tol=1e-10, max_iter=200):
    """Maximizer of the (log-concave) density."""
    res = newton_maximize(
        lambda t: sn_log_pdf(t, params),
        lambda t: sn_log_pdf_grad(t, params),
        lambda t: sn_log_pdf_hess(t, params),
        params.xi,
        tol=tol,
        max_iter=max_iter,
    )
    return res.x


def _skew_from_mu_z(mu_z):
    return (4.0 - np.pi) / 2.0 * mu_z**3 / (1.0 - mu_z**2) ** 1.5


def moments_from_params(params: SnParams) -> CenteredMoments:
    mu_z = B * params.delta
    w = params.omega_diag
    wm = w * mu_z
    return CenteredMoments(params.xi + wm, params.omega - np.outer(wm, wm), _skew_from_mu_z(mu_z))


def _mu_z_from_skew(gamma):
    c = np.cbrt(2.0 * gamma / (4.0 - np.pi))
    return c / np.sqrt(1.0 + c**2)


def _params_from_mu_z(mu, sigma, mu_z):
    """Invert the centered parametrization for a given normalized mean.

    Returns ``(xi, omega, omega_bar^{-1} delta, slack)`` where ``slack`` is
    ``1 - delta' omega_bar^{-1} delta``.
    """
    sd = np.sqrt(np.diag(sigma))
    sigma_z = np.sqrt(1.0 - mu_z**2)
    w = sd / sigma_z
    xi = mu - w * mu_z
    wm = w * mu_z
    omega = sigma + np.outer(wm, wm)
    omega_bar = omega / np.outer(w, w)
    delta = mu_z / B
    try:
        ob = cholesky(omega_bar)
    except NotPositiveDefinite as exc:
        raise ScaleNotPd(str(exc)) from None
    ob_inv_delta = ob.solve(delta)
    slack = 1.0 - delta @ ob_inv_delta
    return xi, omega, ob_inv_delta, slack


def params_from_moments(m: CenteredMoments) -> SnParams:
    """Closed-form moment-matching estimate of (xi, Omega, alpha).

    Raises ``InadmissibleSkewness`` when a componentwise skewness is outside
    the range the family can produce and ``InadmissibleDelta`` when the
    implied correlation structure is infeasible (within a 1e-6 margin).
    """
    mu = np.asarray(m.mu, dtype=float)
    sigma = np.asarray(m.sigma, dtype=float)
    gamma = np.asarray(m.gamma, dtype=float)
    try:
        cholesky(sigma)
    except NotPositiveDefinite as exc:
        raise ScaleNotPd(f"sample covariance: {exc}") from None
    bad = np.abs(gamma) >= MAX_SKEWNESS
    if np.any(bad):
        raise InadmissibleSkewness(f"|skewness| {np.abs(gamma[bad]).max():.4f} >= {MAX_SKEWNESS:.7f}")
    xi, omega, ob_inv_delta, slack = _params_from_mu_z(mu, sigma, _mu_z_from_skew(gamma))
    if slack <= DELTA_MARGIN:
        raise InadmissibleDelta(f"1 - delta' Omega_bar^-1 delta = {slack:.3g}")
    return SnParams(xi, omega, ob_inv_delta / np.sqrt(slack))


def sn_sample(params: SnParams, n: int, seed) -> np.ndarray:
    """Draw ``n`` iid vectors via the hidden-truncation construction."""
    rng = np.random.default_rng(seed)
    p = params.dim
    big = np.empty((p + 1, p + 1))
    big[0, 0] = 1.0
    big[0, 1:] = big[1:, 0] = params.delta
    big[1:, 1:] = params.omega_bar
    u = rng.standard_normal((n, p + 1)) @ cholesky(big).chol.T
    z = np.where(u[:, :1] > 0, u[:, 1:], -u[:, 1:])
    return params.xi + z * params.omega_diag


@dataclass(frozen=True, eq=False)
class SnFit:
    params: SnParams
    clipped: bool
    attempts: int
    moments: CenteredMoments


def _clipped_params(m: CenteredMoments) -> SnParams:
    gamma = np.clip(m.gamma, -CLIP_SKEWNESS, CLIP_SKEWNESS)
    mu_z = _mu_z_from_skew(gamma)

    def slack(k):
        return _params_from_mu_z(m.mu, m.sigma, k * mu_z)[3]

    target = CLIP_DELTA_MARGIN
    k = 1.0
    if slack(1.0) < target:
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if slack(mid) >= target:
                lo = mid
            else:
                hi = mid
        k = lo
    xi, omega, ob_inv_delta, s = _params_from_mu_z(m.mu, m.sigma, k * mu_z)
    return SnParams(xi, omega, ob_inv_delta / np.sqrt(s))


def fit_sn_mm(chain, max_attempts=10, resampler=None) -> SnFit:
    """Moment-matching SN fit to MCMC draws.

    ``chain`` is a ``Chain`` or an (n, p) array. On inadmissible moments
    ``resampler(attempt)`` is called for a fresh chain, up to ``max_attempts``
    times in total. If no admissible sample turns up, skewness is clipped to
    +/-0.99 and delta pulled inside the feasible region; the result is then
    flagged ``clipped``.
    """
    draws = getattr(chain, "draws", chain)
    attempts = 0
    while True:
        attempts += 1
        draws = np.asarray(draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        if draws.shape[0] < 100:
            raise TooFewDraws(f"need at least 100 draws, got {draws.shape[0]}")
        m = sample_moments(draws)
        if not (np.all(np.isfinite(m.mu)) and np.all(np.isfinite(m.sigma)) and np.all(np.isfinite(m.gamma))):
            raise FitFailed("non-finite sample moments")
        try:
            return SnFit(params_from_moments(m), False, attempts, m)
        except Inadmissible:
            if resampler is None or attempts >= max_attempts:
                break
        fresh = resampler(attempts)
        draws = getattr(fresh, "draws", fresh)
    return SnFit(_clipped_params(m), True, attempts, m)
