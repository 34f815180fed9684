"""Divide, fit each subset in parallel, recombine."""
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from dnrlm.datamodels import LogisticData, logistic_loglik, logistic_mle
from dnrlm.errors import DnrError, IndivisibleRows
from dnrlm.mcmc import McmcConfig, derive_seed, sample
from dnrlm.recombine import (
    NORMAL_LOCAL,
    NORMAL_MM,
    SN_MM,
    NormalParams,
    SubsetFit,
    fit_normal_mm,
    recombine_normal,
    recombine_sn,
    recombine_ssn,
    snmm_estimate,
    ssnmm_estimate,
)
from dnrlm.skewnormal import fit_sn_mm

SSN = "SSN"
RUN_KINDS = (SN_MM, SSN, NORMAL_MM, NORMAL_LOCAL)

# stream ids under a subset seed
_CHAIN_STREAM = 0
_RESAMPLE_STREAM = 1
_SHUFFLE_STREAM = 0xFFFF_FFFF


@dataclass(frozen=True)
class DnrConfig:
    r_log2: int
    model_kinds: tuple = (SN_MM,)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    master_seed: int = 20160607
    workers: int = 1
    shuffle: bool = False
    keep_chains: bool = False
    max_attempts: int = 10

    def __post_init__(self):
        if self.r_log2 < 0:
            raise ValueError("r_log2 must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        bad = set(self.model_kinds) - set(RUN_KINDS)
        if bad or not self.model_kinds:
            raise ValueError(f"unknown model kinds {sorted(bad)}")

    @property
    def n_subsets(self):
        return 1 << self.r_log2

    def subset_seed(self, s):
        return derive_seed(self.master_seed, s)

    def to_dict(self):
        m = self.mcmc
        return {
            "r_log2": self.r_log2,
            "model_kinds": list(self.model_kinds),
            "master_seed": self.master_seed,
            "workers": self.workers,
            "shuffle": self.shuffle,
            "max_attempts": self.max_attempts,
            "mcmc": {"n_draws": m.n_draws, "burnin": m.burnin, "thin": m.thin, "initial_step_scale": m.initial_step_scale},
            "subset_seeds": [self.subset_seed(s) for s in range(self.n_subsets)],
        }


@dataclass(eq=False)
class DnrRun:
    config: DnrConfig
    fits: list
    estimates: dict
    timing: dict
    warnings: list
    chains: dict = field(default_factory=dict)


def divide(data: LogisticData, r_log2: int):
    """Contiguous, order-preserving blocks of ``n / 2**r_log2`` rows."""
    r = 1 << r_log2
    if data.n % r:
        raise IndivisibleRows(f"{data.n} rows cannot be split into {r} equal subsets")
    m = data.n // r
    return [data.rows(s * m, (s + 1) * m) for s in range(r)]


def shuffled(data: LogisticData, seed: int) -> LogisticData:
    perm = np.random.default_rng(derive_seed(seed, _SHUFFLE_STREAM)).permutation(data.n)
    return LogisticData(data.X[perm], data.y[perm])


def _needs_chain(kinds):
    return bool({SN_MM, SSN, NORMAL_MM} & set(kinds))


def fit_subset(index, subset: LogisticData, kinds, mcmc: McmcConfig, seed, max_attempts=10, keep_chain=False):
    """Everything that happens on one subset. Runs inside a worker.

    Returns ``(fits, warnings, chain_draws_or_None)``.
    """
    fits, warnings = [], []
    mle, local_cov = logistic_mle(subset)
    if NORMAL_LOCAL in kinds:
        fits.append(SubsetFit(index, NORMAL_LOCAL, normal=NormalParams(mle, local_cov)))
    draws = None
    if _needs_chain(kinds):
        def logf(theta):
            return logistic_loglik(theta, subset)

        def run(stream_seed):
            cfg = mcmc.with_start(mle, local_cov.matrix, seed=stream_seed)
            return sample(logf, cfg)

        chain = run(derive_seed(seed, _CHAIN_STREAM))
        draws = chain.draws if keep_chain else None
        if NORMAL_MM in kinds:
            try:
                fits.append(SubsetFit(index, NORMAL_MM, normal=fit_normal_mm(chain), mcmc_acceptance=chain.acceptance_rate))
            except DnrError as exc:
                warnings.append(f"subset {index}: NORMAL_MM failed: {type(exc).__name__}: {exc}")
        if {SN_MM, SSN} & set(kinds):
            try:
                fit = fit_sn_mm(
                    chain,
                    max_attempts=max_attempts,
                    resampler=lambda attempt: run(derive_seed(derive_seed(seed, _RESAMPLE_STREAM), attempt)),
                )
                fits.append(SubsetFit(index, SN_MM, sn=fit.params, clipped=fit.clipped, mcmc_acceptance=chain.acceptance_rate))
                if fit.clipped:
                    warnings.append(f"subset {index}: SN fit clipped after {fit.attempts} attempts")
                elif fit.attempts > 1:
                    warnings.append(f"subset {index}: SN fit needed {fit.attempts} samples")
            except DnrError as exc:
                warnings.append(f"subset {index}: SN_MM failed: {type(exc).__name__}: {exc}")
    return fits, warnings, draws


def recombine_all(fits, kinds, tol=1e-8):
    """Estimates keyed by run kind, plus warnings for kinds that could not be formed."""
    by_kind = {}
    for f in fits:
        by_kind.setdefault(f.model_kind, []).append(f)
    estimates, warnings = {}, []
    for kind in kinds:
        source = SN_MM if kind == SSN else kind
        group = by_kind.get(source, [])
        try:
            if kind == SN_MM:
                estimates[kind] = snmm_estimate(recombine_sn(group), tol=tol)
            elif kind == SSN:
                estimates[kind] = ssnmm_estimate(recombine_ssn(group), tol=tol)
            else:
                estimates[kind] = recombine_normal(group)[1]
        except DnrError as exc:
            warnings.append(f"{kind}: recombination failed: {type(exc).__name__}: {exc}")
    return estimates, warnings


def run_pipeline(data: LogisticData, config: DnrConfig) -> DnrRun:
    """Run the full divide / fit / recombine procedure.

    Results are bit-identical for any ``workers`` value: every subset has its
    own derived seed and results are slotted by subset index before the
    single-threaded recombination.
    """
    t0 = time.perf_counter()
    if config.shuffle:
        data = shuffled(data, config.master_seed)
    subsets = divide(data, config.r_log2)
    t1 = time.perf_counter()

    jobs = [
        (s, sub, tuple(config.model_kinds), config.mcmc, config.subset_seed(s), config.max_attempts, config.keep_chains)
        for s, sub in enumerate(subsets)
    ]
    slots = [None] * len(jobs)
    if config.workers == 1 or len(jobs) == 1:
        for s, job in enumerate(jobs):
            slots[s] = _run_isolated(job)
    else:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            for s, out in enumerate(pool.map(_run_isolated, jobs)):
                slots[s] = out
    t2 = time.perf_counter()

    fits, warnings, chains, failed = [], [], {}, []
    for s, (sub_fits, sub_warn, draws) in enumerate(slots):
        warnings.extend(sub_warn)
        if not sub_fits:
            failed.append(s)
        fits.extend(sub_fits)
        if draws is not None:
            chains[s] = draws
    if failed:
        shown = "; ".join(warnings[:5]) + (f"; ... {len(warnings) - 5} more" if len(warnings) > 5 else "")
        raise DnrError(f"{len(failed)} subset(s) without any usable fit, first {failed[:5]}: {shown}")

    estimates, rec_warn = recombine_all(fits, config.model_kinds)
    warnings.extend(rec_warn)
    t3 = time.perf_counter()
    timing = {"divide": t1 - t0, "fit": t2 - t1, "recombine": t3 - t2}
    return DnrRun(config, fits, estimates, timing, warnings, chains)


def _run_isolated(job):
    index = job[0]
    try:
        return fit_subset(*job)
    except DnrError as exc:
        return [], [f"subset {index}: {type(exc).__name__}: {exc}"], None

