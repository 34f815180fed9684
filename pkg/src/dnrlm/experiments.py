"""Desk-scale reproductions: the exit-poll posterior comparison and the
logistic-regression divide-and-recombine simulations."""
import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from dnrlm import cpa
from dnrlm.datamodels import (
    County,
    LogisticData,
    PollData,
    betabinom_hess,
    betabinom_log_posterior,
    betabinom_log_posterior_logscale,
    betabinom_mode,
    check_propriety,
    local_normal_from_mode,
    logistic_loglik,
    logistic_mle,
)
from dnrlm.engine import SSN, DnrConfig, run_pipeline
from dnrlm.errors import DnrError, DomainError
from dnrlm.mcmc import McmcConfig, derive_seed, sample
from dnrlm.recombine import NORMAL_MM, SN_MM, recombine_sn, recombine_ssn, recombined_sn_loglik, fit_normal_mm
from dnrlm.skewnormal import fit_sn_mm, sn_mode, sn_sample

SCHEMA_VERSION = 1

# fips, total_voters, sample_voters, sample_clinton
EXIT_POLL_ROWS = (
    (6001, 199445, 100, 52), (6003, 241, 198, 94), (6005, 3769, 150, 75),
    (6007, 24202, 103, 33), (6009, 5126, 104, 54), (6011, 1275, 100, 45),
    (6013, 117523, 122, 68), (6015, 2388, 179, 81), (6017, 20130, 166, 79),
    (6019, 55285, 155, 92), (6021, 1321, 177, 95), (6023, 19470, 153, 46),
    (6025, 8597, 196, 129), (6027, 1749, 124, 53), (6029, 33340, 112, 60),
    (6031, 6623, 163, 98), (6033, 5189, 127, 62), (6035, 1516, 198, 91),
    (6037, 1035968, 144, 61), (6039, 8688, 101, 54), (6041, 47288, 123, 71),
    (6043, 2048, 115, 62), (6045, 7390, 140, 43), (6047, 12577, 126, 61),
    (6049, 551, 200, 81), (6051, 1681, 118, 61), (6053, 30311, 146, 90),
    (6055, 12242, 177, 99), (6057, 14154, 187, 75), (6059, 226598, 165, 93),
    (6061, 30402, 112, 69), (6063, 2747, 173, 65), (6065, 123078, 152, 90),
    (6067, 119943, 166, 88), (6069, 3504, 101, 62), (6071, 124555, 124, 69),
    (6073, 253744, 138, 75), (6075, 153003, 140, 83), (6077, 42003, 121, 81),
    (6079, 33266, 175, 99), (6081, 77763, 189, 118), (6083, 46898, 184, 97),
    (6085, 181757, 162, 105), (6087, 45486, 150, 59), (6089, 12290, 113, 58),
    (6091, 493, 183, 81), (6093, 3962, 106, 39), (6095, 55903, 177, 106),
    (6097, 88257, 128, 70), (6099, 27885, 117, 69), (6101, 4340, 120, 65),
    (6103, 3117, 154, 86), (6105, 1568, 103, 40), (6107, 14414, 168, 106),
    (6109, 5557, 182, 100), (6111, 85219, 130, 65), (6113, 24260, 163, 81),
    (6115, 3387, 196, 85),
)


def exit_poll_data() -> PollData:
    """California Democratic primary exit poll, 58 counties."""
    return PollData(tuple(County(*row) for row in EXIT_POLL_ROWS))


EXIT_POLL_METHODS = ("sn", "normal-mm", "normal-local")
QQ_PROBS = tuple(round(0.05 * k, 2) for k in range(1, 20))
# Both studies keep every 10th chain state. Moment-matched SN fits depend on
# sample skewness, and CPA compares coverage fractions; both need far more
# effective draws than a mean does, and the chains here are cheap.
STUDY_THIN = 10


def poll_log_ref(data: PollData):
    """Vectorized log posterior over (n, 2) rows of (alpha, beta); -inf off support."""
    def log_ref(ab):
        ab = np.atleast_2d(np.asarray(ab, dtype=float))
        out = np.full(ab.shape[0], -np.inf)
        ok = np.all(ab > 0, axis=1)
        if np.any(ok):
            out[ok] = betabinom_log_posterior(ab[ok, 0], ab[ok, 1], data)
        return out
    return log_ref


def _mvn_sample(mean, cov, n, seed):
    rng = np.random.default_rng(seed)
    return mean + rng.standard_normal((n, mean.shape[0])) @ cov.chol.T


@dataclass(eq=False)
class ExitPollReport:
    true_mode: np.ndarray
    modes: dict
    distances: dict
    qq: dict
    cpa: dict
    acceptance_rate: float
    sn_clipped: bool
    seed: int
    config: dict
    warnings: list = field(default_factory=list)
    samples: dict = field(default_factory=dict, repr=False)


def exitpoll_study(mcmc: McmcConfig = None, n_compare=10000, data: PollData = None, targets=cpa.DEFAULT_TARGETS) -> ExitPollReport:
    """Compare MM skew-normal, MM normal and Local normal approximations to
    the (alpha, beta) posterior of the exit-poll model.

    The true posterior is sampled by Metropolis in (log alpha, log beta) and
    mapped back. Each approximation is summarized by the distance from its
    mode to the true mode, marginal quantiles of an ``n_compare`` sample and
    contour probabilities measured against the true posterior.
    """
    data = exit_poll_data() if data is None else data
    mcmc = McmcConfig(thin=STUDY_THIN) if mcmc is None else mcmc
    if not check_propriety(data):
        raise DomainError("posterior is improper for these data")
    seed = mcmc.seed
    warnings = []

    mode, hess = betabinom_mode(data)
    log_mode = np.log(mode)
    # proposal shape: inverse negative Hessian in log coordinates
    cov_log = np.linalg.inv(-(hess * np.outer(mode, mode)))

    def logf(u):
        return betabinom_log_posterior_logscale(u, data)

    def chain_for(stream):
        cfg = mcmc.with_start(log_mode, cov_log, seed=derive_seed(seed, stream))
        return sample(logf, cfg)

    chain = chain_for(0)
    true_draws = np.exp(chain.draws)

    approx, modes = {}, {}
    sn = fit_sn_mm(true_draws, resampler=lambda attempt: np.exp(chain_for(100 + attempt).draws))
    if sn.clipped:
        warnings.append("SN moment fit was clipped")
    modes["sn"] = sn_mode(sn.params)
    approx["sn"] = sn_sample(sn.params, n_compare, derive_seed(seed, 1))

    normal = fit_normal_mm(true_draws)
    modes["normal-mm"] = normal.mu
    approx["normal-mm"] = _mvn_sample(normal.mu, normal.sigma, n_compare, derive_seed(seed, 2))

    local_mu, local_cov = local_normal_from_mode(mode, betabinom_hess(mode[0], mode[1], data))
    modes["normal-local"] = local_mu
    approx["normal-local"] = _mvn_sample(local_mu, local_cov, n_compare, derive_seed(seed, 3))

    distances = {k: float(np.linalg.norm(v - mode)) for k, v in modes.items()}

    probs = np.array(QQ_PROBS)
    qq = {"true": np.quantile(true_draws, probs, axis=0)}
    for k, s in approx.items():
        qq[k] = np.quantile(s, probs, axis=0)

    log_ref = poll_log_ref(data)
    h = cpa.thresholds_for_targets(log_ref, mode, true_draws, targets)
    results = {k: cpa.cpa_run(log_ref, mode, true_draws, s, h) for k, s in approx.items()}

    config = {
        "n_draws": mcmc.n_draws,
        "burnin": mcmc.burnin,
        "thin": mcmc.thin,
        "seed": seed,
        "n_compare": n_compare,
        "chain_seed": derive_seed(seed, 0),
        "sample_seeds": {"sn": derive_seed(seed, 1), "normal-mm": derive_seed(seed, 2), "normal-local": derive_seed(seed, 3)},
    }
    return ExitPollReport(
        true_mode=mode,
        modes=modes,
        distances=distances,
        qq=qq,
        cpa=results,
        acceptance_rate=chain.acceptance_rate,
        sn_clipped=sn.clipped,
        seed=seed,
        config=config,
        warnings=warnings,
        samples={"true": true_draws, **approx},
    )


def write_exitpoll_report(report: ExitPollReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "modes.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "alpha", "beta", "log_alpha", "log_beta", "true_alpha", "true_beta", "distance"])
        for k in EXIT_POLL_METHODS:
            a, b = report.modes[k]
            w.writerow([k, repr(float(a)), repr(float(b)), repr(float(np.log(a))), repr(float(np.log(b))),
                        repr(float(report.true_mode[0])), repr(float(report.true_mode[1])), repr(report.distances[k])])
    for j, name in enumerate(("alpha", "beta")):
        with open(os.path.join(out_dir, f"qq_{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["prob", "true"] + list(EXIT_POLL_METHODS))
            for i, pr in enumerate(QQ_PROBS):
                w.writerow([pr, repr(float(report.qq["true"][i, j]))] + [repr(float(report.qq[k][i, j])) for k in EXIT_POLL_METHODS])
    for k, res in report.cpa.items():
        cpa.write_cpa_csv(os.path.join(out_dir, f"cpa_{k}.csv"), res)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "true_mode": report.true_mode.tolist(),
        "distances": report.distances,
        "cpa_max_abs_diff": {k: r.max_abs_diff() for k, r in report.cpa.items()},
        "cpa_mean_abs_diff": {k: r.mean_abs_diff() for k, r in report.cpa.items()},
        "acceptance_rate": report.acceptance_rate,
        "sn_clipped": report.sn_clipped,
        "warnings": report.warnings,
        "config": report.config,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary


# ---------------------------------------------------------------------------
# Logistic regression simulations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimDesign:
    runs: int = 5
    m_log2: int = 8
    r_log2: int = 3
    p: int = 5
    seed: int = 20160607

    @property
    def theta_true(self):
        return np.ones(self.p)

    @property
    def n(self):
        return 1 << (self.m_log2 + self.r_log2)

    def run_seed(self, run_index):
        return derive_seed(self.seed, run_index)


def simulate_logistic(design: SimDesign, run_index: int) -> LogisticData:
    """Rows x_i ~ N_p(0, I), y_i ~ Bernoulli(logistic(x_i' theta)) with theta = 1."""
    rng = np.random.default_rng(derive_seed(design.run_seed(run_index), 0))
    X = rng.standard_normal((design.n, design.p))
    prob = 1.0 / (1.0 + np.exp(-X @ design.theta_true))
    y = (rng.random(design.n) < prob).astype(float)
    return LogisticData(X, y)


STUDY_METHODS = ("sn", "ssn", "normal-mm")
_KIND_OF = {"sn": SN_MM, "ssn": SSN, "normal-mm": NORMAL_MM}


@dataclass(eq=False)
class LogisticRunReport:
    run_index: int
    mle: np.ndarray
    mle_cov: np.ndarray
    estimates: dict
    cpa: dict
    warnings: list
    seeds: dict


def logistic_study_run(design: SimDesign, run_index: int, mcmc: McmcConfig = None, workers=1, targets=cpa.DEFAULT_TARGETS) -> LogisticRunReport:
    mcmc = McmcConfig(thin=STUDY_THIN) if mcmc is None else mcmc
    run_seed = design.run_seed(run_index)
    seeds = {k: derive_seed(run_seed, i) for i, k in enumerate(("data", "pipeline", "true_chain", "sn_chain", "ssn_chain", "normal_draws"))}
    data = simulate_logistic(design, run_index)
    mle, mle_cov = logistic_mle(data)

    config = DnrConfig(
        r_log2=design.r_log2,
        model_kinds=(SN_MM, SSN, NORMAL_MM),
        mcmc=mcmc,
        master_seed=seeds["pipeline"],
        workers=workers,
    )
    run = run_pipeline(data, config)
    warnings = list(run.warnings)

    def log_ref(theta):
        return logistic_loglik(np.atleast_2d(theta), data)

    true_chain = sample(lambda t: logistic_loglik(t, data), mcmc.with_start(mle, mle_cov.matrix, seed=seeds["true_chain"]))
    ref = true_chain.draws
    h = cpa.thresholds_for_targets(log_ref, mle, ref, targets)

    estimates, results = {}, {}
    sn_fits = [f for f in run.fits if f.model_kind == SN_MM]
    for method in STUDY_METHODS:
        est = run.estimates.get(_KIND_OF[method])
        if est is None:
            warnings.append(f"run {run_index}: no {method} estimate")
            continue
        estimates[method] = est
        try:
            if method == "normal-mm":
                approx = _mvn_sample(est.theta_hat, est.covariance, mcmc.n_draws, seeds["normal_draws"])
            else:
                model = recombine_sn(sn_fits) if method == "sn" else recombine_ssn(sn_fits)
                cfg = mcmc.with_start(est.theta_hat, est.covariance.matrix, seed=seeds[f"{method}_chain"])
                approx = sample(lambda t, m=model: recombined_sn_loglik(t, m), cfg).draws
            results[method] = cpa.cpa_run(log_ref, mle, ref, approx, h)
        except DnrError as exc:
            warnings.append(f"run {run_index}: {method} CPA failed: {type(exc).__name__}: {exc}")
    return LogisticRunReport(run_index, mle, mle_cov.matrix, estimates, results, warnings, seeds)


def logistic_study(design: SimDesign, run_indices=None, mcmc: McmcConfig = None, workers=1):
    """One ``LogisticRunReport`` per run; a failing run is recorded, not raised."""
    run_indices = range(1, design.runs + 1) if run_indices is None else run_indices
    reports, failures = [], {}
    for k in run_indices:
        try:
            reports.append(logistic_study_run(design, k, mcmc=mcmc, workers=workers))
        except DnrError as exc:
            failures[k] = f"{type(exc).__name__}: {exc}"
    return reports, failures


def write_logistic_study(reports, failures, design: SimDesign, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "cpa_series.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "method", "h", "T", "A", "diff"])
        for rep in reports:
            for method, res in rep.cpa.items():
                for i in np.argsort(res.T, kind="stable"):
                    w.writerow([rep.run_index, method, repr(float(res.h[i])), repr(float(res.T[i])),
                                repr(float(res.A[i])), repr(float(res.A[i] - res.T[i]))])
    runs = {}
    for rep in reports:
        runs[str(rep.run_index)] = {
            "mle": rep.mle.tolist(),
            "mle_cov_trace": float(np.trace(rep.mle_cov)),
            "estimates": {k: e.to_dict() for k, e in rep.estimates.items()},
            "distance_to_mle": {k: float(np.linalg.norm(e.theta_hat - rep.mle)) for k, e in rep.estimates.items()},
            "cpa_mean_abs_diff": {k: r.mean_abs_diff() for k, r in rep.cpa.items()},
            "cpa_max_abs_diff": {k: r.max_abs_diff() for k, r in rep.cpa.items()},
            "warnings": rep.warnings,
            "seeds": rep.seeds,
        }
    summary = {
        "schema_version": SCHEMA_VERSION,
        "design": {"runs": design.runs, "m": design.m_log2, "r": design.r_log2, "p": design.p, "seed": design.seed},
        "runs": runs,
        "failures": {str(k): v for k, v in failures.items()},
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary
