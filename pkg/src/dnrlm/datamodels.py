"""Data models: logistic regression and the beta-binomial exit-poll posterior."""
import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from dnrlm.errors import DimensionMismatch, DomainError, NotPositiveDefinite, SingularInformation
from dnrlm.numkit import cholesky, newton_maximize


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

_CHUNK = 512


@dataclass(frozen=True, eq=False)
class LogisticData:
    """Design matrix ``X`` (n x p) and binary response ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.all((y == 0) | (y == 1)):
            raise DomainError("y must be 0/1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def rows(self, start, stop):
        return LogisticData(self.X[start:stop], self.y[start:stop])


def _check_theta(theta, data):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != data.p:
        raise DimensionMismatch(f"theta has dim {theta.shape[-1]}, data has {data.p} columns")
    return theta


def logistic_loglik(theta, data: LogisticData):
    """Bernoulli log-likelihood with a logit link.

    ``theta`` may be a single (p,) vector or an (m, p) stack, in which case an
    (m,) array of log-likelihoods is returned.
    """
    theta = _check_theta(theta, data)
    if theta.ndim == 1:
        eta = data.X @ theta
        # log(1 + e^eta) without overflow
        return float(data.y @ eta - np.sum(np.logaddexp(0.0, eta)))
    out = np.empty(theta.shape[0])
    for start in range(0, theta.shape[0], _CHUNK):
        eta = data.X @ theta[start:start + _CHUNK].T
        out[start:start + _CHUNK] = data.y @ eta - np.sum(np.logaddexp(0.0, eta), axis=0)
    return out


def logistic_grad(theta, data: LogisticData):
    theta = _check_theta(theta, data)
    prob = special.expit(data.X @ theta)
    return data.X.T @ (data.y - prob)


def logistic_hess(theta, data: LogisticData):
    theta = _check_theta(theta, data)
    prob = special.expit(data.X @ theta)
    w = prob * (1.0 - prob)
    return -(data.X.T * w) @ data.X


def logistic_mle(data: LogisticData, tol=1e-8, max_iter=100):
    """Newton-Raphson MLE from theta = 0.

    Returns ``(theta_hat, neg_hess_inv)`` where the second item is the inverse
    observed information as an ``SpdMatrix``. Raises ``NoConverge`` when the
    iterates run off to infinity, which is what complete separation looks like.
    """
    res = newton_maximize(
        lambda t: logistic_loglik(t, data),
        lambda t: logistic_grad(t, data),
        lambda t: logistic_hess(t, data),
        np.zeros(data.p),
        tol=tol,
        max_iter=max_iter,
    )
    try:
        info = cholesky(-res.hess)
    except NotPositiveDefinite as exc:
        raise SingularInformation(f"observed information not PD at the MLE: {exc}") from None
    return res.x, info.inverse()


def load_logistic_csv(path) -> LogisticData:
    """Read a CSV with a ``y`` column and ``x1..xp`` columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        xcols = sorted((c for c in header if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
        if "y" not in header or not xcols:
            raise DomainError(f"{path}: expected columns y, x1..xp; got {header}")
        ys, xs = [], []
        for row in reader:
            ys.append(float(row["y"]))
            xs.append([float(row[c]) for c in xcols])
    return LogisticData(np.array(xs, dtype=float).reshape(len(ys), len(xcols)), np.array(ys))


def write_logistic_csv(path, data: LogisticData):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{j + 1}" for j in range(data.p)])
        for yi, xi in zip(data.y, data.X):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])


# ---------------------------------------------------------------------------
# Beta-binomial hierarchical model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class County:
    fips: int
    total_voters: int
    sample_voters: int
    sample_clinton: int


@dataclass(frozen=True, eq=False)
class PollData:
    counties: tuple

    def __post_init__(self):
        counties = tuple(self.counties)
        for c in counties:
            if c.sample_voters < 1 or not 0 <= c.sample_clinton <= c.sample_voters:
                raise DomainError(f"county {c.fips}: need n >= 1 and 0 <= y <= n")
        object.__setattr__(self, "counties", counties)

    @cached_property
    def n(self):
        return np.array([c.sample_voters for c in self.counties], dtype=float)

    @cached_property
    def y(self):
        return np.array([c.sample_clinton for c in self.counties], dtype=float)

    def __len__(self):
        return len(self.counties)


def check_propriety(data: PollData) -> bool:
    """The flat-ish hyperprior gives a proper posterior iff some 0 < y_j < n_j."""
    return any(0 < c.sample_clinton < c.sample_voters for c in data.counties)


def _check_ab(alpha, beta):
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(~(alpha > 0)) or np.any(~(beta > 0)):
        raise DomainError("alpha and beta must be positive")
    return alpha, beta


def betabinom_log_posterior(alpha, beta, data: PollData):
    """Unnormalized log marginal posterior of (alpha, beta).

    Prior ``(alpha + beta)^(-5/2)``; the county-level rates are integrated out.
    Broadcasts over array-valued ``alpha`` and ``beta``.
    """
    alpha, beta = _check_ab(alpha, beta)
    n, y = data.n, data.y
    a = alpha[..., None]
    b = beta[..., None]
    gl = special.gammaln
    lp = (
        -2.5 * np.log(alpha + beta)
        + len(data) * (gl(alpha + beta) - gl(alpha) - gl(beta))
        + np.sum(gl(a + y) + gl(b + n - y) - gl(a + b + n), axis=-1)
    )
    return float(lp) if lp.ndim == 0 else lp


def betabinom_grad(alpha, beta, data: PollData):
    """Gradient of the log posterior with respect to (alpha, beta)."""
    alpha, beta = _check_ab(alpha, beta)
    alpha, beta = float(alpha), float(beta)
    n, y, J = data.n, data.y, len(data)
    psi = special.digamma
    common = -2.5 / (alpha + beta) + J * psi(alpha + beta) - np.sum(psi(alpha + beta + n))
    da = common - J * psi(alpha) + np.sum(psi(alpha + y))
    db = common - J * psi(beta) + np.sum(psi(beta + n - y))
    return np.array([da, db])


def betabinom_hess(alpha, beta, data: PollData):
    alpha, beta = _check_ab(alpha, beta)
    alpha, beta = float(alpha), float(beta)
    n, y, J = data.n, data.y, len(data)

    def tri(x):
        return special.polygamma(1, x)

    common = 2.5 / (alpha + beta) ** 2 + J * tri(alpha + beta) - np.sum(tri(alpha + beta + n))
    haa = common - J * tri(alpha) + np.sum(tri(alpha + y))
    hbb = common - J * tri(beta) + np.sum(tri(beta + n - y))
    return np.array([[haa, common], [common, hbb]])


def betabinom_log_posterior_logscale(u, data: PollData):
    """Log posterior density of (log alpha, log beta), Jacobian included."""
    u = np.asarray(u, dtype=float)
    return betabinom_log_posterior(np.exp(u[..., 0]), np.exp(u[..., 1]), data) + u[..., 0] + u[..., 1]


def betabinom_mode(data: PollData, tol=1e-8, max_iter=200):
    """Mode of the (alpha, beta) posterior and the Hessian there.

    Newton runs in (log alpha, log beta) so positivity is automatic; the
    objective is the posterior density in the original coordinates (no
    Jacobian), so the returned point is the (alpha, beta) mode.
    """
    def f(u):
        return betabinom_log_posterior(np.exp(u[0]), np.exp(u[1]), data)

    def g(u):
        e = np.exp(u)
        return betabinom_grad(e[0], e[1], data) * e

    def h(u):
        e = np.exp(u)
        ga = betabinom_grad(e[0], e[1], data)
        return betabinom_hess(e[0], e[1], data) * np.outer(e, e) + np.diag(ga * e)

    y_rate = np.sum(data.y) / np.sum(data.n)
    u0 = np.log([y_rate, 1 - y_rate])
    res = newton_maximize(f, g, h, u0, tol=tol, max_iter=max_iter)
    mode = np.exp(res.x)
    return mode, betabinom_hess(mode[0], mode[1], data)


def load_poll_csv(path) -> PollData:
    with open(path, newline="") as fh:
        counties = [
            County(int(r["fips"]), int(r["total_voters"]), int(r["sample_voters"]), int(r["sample_clinton"]))
            for r in csv.DictReader(fh)
        ]
    return PollData(tuple(counties))


def write_poll_csv(path, data: PollData):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fips", "total_voters", "sample_voters", "sample_clinton"])
        for c in data.counties:
            w.writerow([c.fips, c.total_voters, c.sample_voters, c.sample_clinton])


def local_normal_from_mode(mode, hess) -> tuple:
    """Mode and inverse negative Hessian, as a (mean, SpdMatrix) pair."""
    try:
        info = cholesky(-np.asarray(hess))
    except NotPositiveDefinite as exc:
        raise SingularInformation(str(exc)) from None
    return np.asarray(mode, dtype=float), info.inverse()

