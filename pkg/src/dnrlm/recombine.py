"""Subset likelihood-model fits and their recombination.

Subset fits are multiplied together: the log of the all-data approximation is
the sum of subset log densities, up to an unknown additive constant which is
taken as zero throughout. Every reduction runs in ascending ``subset_index``
order so results do not depend on the order fits arrive in.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from dnrlm.datamodels import LogisticData, logistic_mle
from dnrlm.errors import DimensionMismatch, DnrError, NotPositiveDefinite, ScaleNotPd, SingularInformation
from dnrlm.numkit import SpdMatrix, cholesky, log_phi_curvature, mills_ratio, newton_maximize, sample_moments, std_normal_log_cdf
from dnrlm.skewnormal import SnParams

SCHEMA_VERSION = 1

SN_MM = "SN_MM"
NORMAL_MM = "NORMAL_MM"
NORMAL_LOCAL = "NORMAL_LOCAL"
FIT_KINDS = (SN_MM, NORMAL_MM, NORMAL_LOCAL)


@dataclass(frozen=True, eq=False)
class NormalParams:
    mu: np.ndarray
    sigma: SpdMatrix

    @property
    def dim(self):
        return self.mu.shape[0]

    def to_dict(self):
        return {"mu": self.mu.tolist(), "sigma": self.sigma.matrix.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mu"], dtype=float), _spd(np.array(d["sigma"], dtype=float)))


def _spd(m):
    try:
        return cholesky(m)
    except NotPositiveDefinite as exc:
        raise ScaleNotPd(str(exc)) from None


@dataclass(frozen=True, eq=False)
class SubsetFit:
    subset_index: int
    model_kind: str
    sn: SnParams = None
    normal: NormalParams = None
    clipped: bool = False
    mcmc_acceptance: float = float("nan")

    def __post_init__(self):
        if self.model_kind not in FIT_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        want_sn = self.model_kind == SN_MM
        if want_sn != (self.sn is not None) or want_sn == (self.normal is not None):
            raise ValueError(f"{self.model_kind} fit must carry exactly the matching parameters")

    @property
    def dim(self):
        return (self.sn or self.normal).dim

    def to_dict(self):
        d = {
            "subset_index": self.subset_index,
            "model_kind": self.model_kind,
            "clipped": self.clipped,
            "mcmc_acceptance": None if np.isnan(self.mcmc_acceptance) else self.mcmc_acceptance,
        }
        if self.sn is not None:
            d["sn"] = self.sn.to_dict()
        else:
            d["normal"] = self.normal.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        acc = d.get("mcmc_acceptance")
        return cls(
            subset_index=int(d["subset_index"]),
            model_kind=d["model_kind"],
            sn=SnParams.from_dict(d["sn"]) if "sn" in d else None,
            normal=NormalParams.from_dict(d["normal"]) if "normal" in d else None,
            clipped=bool(d.get("clipped", False)),
            mcmc_acceptance=float("nan") if acc is None else float(acc),
        )


def dump_fits(fits, path):
    payload = {"schema_version": SCHEMA_VERSION, "fits": [f.to_dict() for f in fits]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_fits(path):
    with open(path) as fh:
        payload = json.load(fh)
    items = payload["fits"] if isinstance(payload, dict) else payload
    return [SubsetFit.from_dict(d) for d in items]


# ---------------------------------------------------------------------------
# Subset fitting
# ---------------------------------------------------------------------------

def fit_normal_mm(chain) -> NormalParams:
    """Sample mean and covariance of the draws."""
    draws = np.asarray(getattr(chain, "draws", chain), dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < draws.shape[1] + 2:
        raise DnrError(f"need at least p + 2 = {draws.shape[1] + 2} draws")
    m = sample_moments(draws)
    return NormalParams(m.mu, _spd(m.sigma))


def fit_normal_local(data: LogisticData, tol=1e-8, max_iter=100) -> NormalParams:
    """Normal centred at the subset MLE with inverse observed information."""
    mle, cov = logistic_mle(data, tol=tol, max_iter=max_iter)
    return NormalParams(mle, cov)


# ---------------------------------------------------------------------------
# Recombination
# ---------------------------------------------------------------------------

NORMAL = "NORMAL"
SN = "SN"
SSN = "SSN"


@dataclass(frozen=True, eq=False)
class RecombinedModel:
    """Sum of subset log densities in a form that is cheap to evaluate.

    ``xis``/``lams`` hold one skewing term per row and ``weights`` its
    multiplicity: R rows of weight 1 for SN, a single averaged row of weight
    R for SSN, nothing for NORMAL.
    """

    kind: str
    pooled_precision: SpdMatrix
    pooled_location: np.ndarray
    xis: np.ndarray = field(default=None)
    lams: np.ndarray = field(default=None)
    weights: np.ndarray = field(default=None)

    @property
    def dim(self):
        return self.pooled_location.shape[0]

    @property
    def n_subsets(self):
        return 0 if self.weights is None else int(round(self.weights.sum()))


@dataclass(frozen=True, eq=False)
class DnrEstimate:
    theta_hat: np.ndarray
    covariance: SpdMatrix
    estimator_kind: str
    optimizer_iters: int = 0
    grad_norm: float = 0.0

    def to_dict(self):
        return {
            "estimator_kind": self.estimator_kind,
            "theta_hat": self.theta_hat.tolist(),
            "covariance": self.covariance.matrix.tolist(),
            "optimizer_iters": self.optimizer_iters,
            "grad_norm": self.grad_norm,
        }


def _ordered(fits, kind):
    if not fits:
        raise DnrError("no fits to recombine")
    fits = sorted(fits, key=lambda f: f.subset_index)
    p = fits[0].dim
    for f in fits:
        if f.dim != p:
            raise DimensionMismatch("subset fits have different dimensions")
        if kind == SN_MM and f.model_kind != SN_MM:
            raise DnrError(f"subset {f.subset_index} is not a skew-normal fit")
        if kind != SN_MM and f.normal is None:
            raise DnrError(f"subset {f.subset_index} is not a normal fit")
    return fits


def _pool(precisions, locations):
    """Precision-weighted pooling: returns (pooled precision, pooled location)."""
    prec = np.zeros_like(precisions[0])
    weighted = np.zeros_like(locations[0])
    for q, loc in zip(precisions, locations):
        prec = prec + q
        weighted = weighted + q @ loc
    prec_spd = _spd(0.5 * (prec + prec.T))
    return prec_spd, prec_spd.solve(weighted)


def recombine_normal(fits):
    """Product of subset normal fits; closed form, no iteration.

    Returns ``(RecombinedModel, DnrEstimate)`` with the estimate at the pooled
    mean and covariance equal to the inverse pooled precision.
    """
    fits = _ordered(fits, NORMAL_MM)
    if len(fits) == 1:
        # exact identity, no round trip through two inverses
        only = fits[0].normal
        return RecombinedModel(NORMAL, only.sigma.inverse(), only.mu), DnrEstimate(only.mu, only.sigma, "NMM")
    prec, mu = _pool([f.normal.sigma.inverse().matrix for f in fits], [f.normal.mu for f in fits])
    model = RecombinedModel(NORMAL, prec, mu)
    return model, DnrEstimate(mu, prec.inverse(), "NMM")


def recombine_sn(fits) -> RecombinedModel:
    fits = _ordered(fits, SN_MM)
    prec, xi = _pool([f.sn.omega_inv for f in fits], [f.sn.xi for f in fits])
    xis = np.array([f.sn.xi for f in fits])
    lams = np.array([f.sn.lam for f in fits])
    return RecombinedModel(SN, prec, xi, xis, lams, np.ones(len(fits)))


def recombine_ssn(fits) -> RecombinedModel:
    """Simplified SN recombination: one averaged skewing term counted R times.

    The quadratic part is the same precision-weighted pooling as for SN; the
    skewing term uses plain averages of the subset slants and locations.
    """
    fits = _ordered(fits, SN_MM)
    prec, xi = _pool([f.sn.omega_inv for f in fits], [f.sn.xi for f in fits])
    r = len(fits)
    xi_a = np.zeros(xi.shape[0])
    lam_a = np.zeros(xi.shape[0])
    for f in fits:
        xi_a = xi_a + f.sn.xi
        lam_a = lam_a + f.sn.lam
    return RecombinedModel(SSN, prec, xi, (xi_a / r)[None, :], (lam_a / r)[None, :], np.array([float(r)]))


def _check_dim(theta, model):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != model.dim:
        raise DimensionMismatch(f"theta has dim {theta.shape[-1]}, model has {model.dim}")
    return theta


def recombined_sn_loglik(theta, model: RecombinedModel):
    """Recombined log-likelihood (constant term zero) at one point or each row."""
    theta = _check_dim(theta, model)
    d = theta - model.pooled_location
    quad = np.sum(d * (d @ model.pooled_precision.matrix), axis=-1)
    out = -0.5 * quad
    if model.weights is not None:
        # t has shape (..., terms)
        t = np.einsum("...kj,kj->...k", theta[..., None, :] - model.xis, model.lams)
        out = out + np.sum(model.weights * std_normal_log_cdf(t), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def recombined_sn_grad(theta, model: RecombinedModel):
    theta = _check_dim(theta, model)
    g = -model.pooled_precision.matrix @ (theta - model.pooled_location)
    if model.weights is not None:
        t = np.sum(model.lams * (theta - model.xis), axis=1)
        g = g + (model.weights * mills_ratio(t)) @ model.lams
    return g


def recombined_sn_hess(theta, model: RecombinedModel):
    theta = _check_dim(theta, model)
    h = -model.pooled_precision.matrix.copy()
    if model.weights is not None:
        t = np.sum(model.lams * (theta - model.xis), axis=1)
        c = model.weights * log_phi_curvature(t)
        h = h + (model.lams.T * c) @ model.lams
    return h


recombined_ssn_loglik = recombined_sn_loglik
recombined_ssn_grad = recombined_sn_grad
recombined_ssn_hess = recombined_sn_hess


def _maximize(model, kind, tol, max_iter):
    res = newton_maximize(
        lambda t: recombined_sn_loglik(t, model),
        lambda t: recombined_sn_grad(t, model),
        lambda t: recombined_sn_hess(t, model),
        model.pooled_location,
        tol=tol,
        max_iter=max_iter,
    )
    try:
        info = cholesky(-res.hess)
    except NotPositiveDefinite as exc:
        raise SingularInformation(str(exc)) from None
    return DnrEstimate(res.x, info.inverse(), kind, res.iterations, float(np.max(np.abs(res.grad))))


def snmm_estimate(model: RecombinedModel, tol=1e-8, max_iter=200) -> DnrEstimate:
    """Maximizer of the recombined SN log-likelihood with observed-information covariance."""
    if model.kind != SN:
        raise DnrError(f"expected an SN model, got {model.kind}")
    return _maximize(model, "SNMM", tol, max_iter)


def ssnmm_estimate(model: RecombinedModel, tol=1e-8, max_iter=200) -> DnrEstimate:
    if model.kind != SSN:
        raise DnrError(f"expected an SSN model, got {model.kind}")
    return _maximize(model, "SSNMM", tol, max_iter)
