"""Adaptive random-walk Metropolis sampler.

The proposal is multivariate normal. During burn-in the step size is tuned
every 100 proposals toward a target acceptance rate, and halfway through
burn-in the proposal shape is replaced by the scaled covariance of the
burn-in states. After burn-in the proposal is frozen, so the retained draws
come from a genuine Metropolis chain with the intended stationary law.
"""
import csv
from dataclasses import dataclass, field, replace

import numpy as np

from dnrlm.errors import BadInitialPoint, DegenerateChain, DomainError
from dnrlm.numkit import SpdMatrix, cholesky

MASK64 = (1 << 64) - 1
DEFAULT_SEED = 20160607

ADAPT_EVERY = 100
ADAPT_STEP = 0.05
COV_JITTER = 1e-6
MIN_ACCEPTANCE = 0.01


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Child seed for stream ``index``; distinct indices never collide."""
    return splitmix64(splitmix64(master & MASK64) ^ (index & MASK64))


@dataclass(frozen=True)
class McmcConfig:
    n_draws: int = 10000
    burnin: int = 5000
    initial_point: tuple = None
    initial_step_scale: float = None
    seed: int = DEFAULT_SEED
    thin: int = 1
    # not part of the minimal sampler contract: a starting proposal shape,
    # typically the inverse observed information at the mode
    initial_proposal_cov: tuple = None

    def __post_init__(self):
        if self.n_draws < 100:
            raise DomainError("n_draws must be at least 100")
        if self.thin < 1:
            raise DomainError("thin must be at least 1")
        if self.burnin < 0:
            raise DomainError("burnin must be non-negative")
        if self.initial_step_scale is not None and not self.initial_step_scale > 0:
            raise DomainError("initial_step_scale must be positive")

    def with_start(self, point, proposal_cov=None, seed=None):
        kw = {"initial_point": tuple(float(v) for v in np.ravel(point))}
        if proposal_cov is not None:
            kw["initial_proposal_cov"] = tuple(map(tuple, np.asarray(proposal_cov, dtype=float)))
        if seed is not None:
            kw["seed"] = seed
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class Chain:
    draws: np.ndarray
    acceptance_rate: float
    final_proposal_cov: SpdMatrix = field(repr=False)
    seed: int

    @property
    def dim(self):
        return self.draws.shape[1]


def _target_rate(p):
    return 0.44 if p == 1 else 0.234


def sample(logf, config: McmcConfig) -> Chain:
    """Draw ``config.n_draws`` post-burn-in states from ``exp(logf)``.

    ``logf`` maps a (p,) array to a real; NaN and -inf proposals are rejected.
    Deterministic for a fixed ``config``.
    """
    if config.initial_point is None:
        raise DomainError("initial_point is required (use zeros when nothing better is known)")
    x = np.array(config.initial_point, dtype=float)
    p = x.shape[0]
    lx = logf(x)
    if not np.isfinite(lx):
        raise BadInitialPoint(f"log density at initial point is {lx}")

    seq = np.random.SeedSequence(config.seed & MASK64)
    prop_rng, accept_rng = [np.random.default_rng(s) for s in seq.spawn(2)]

    base = np.eye(p) if config.initial_proposal_cov is None else np.array(config.initial_proposal_cov, dtype=float)
    step = config.initial_step_scale or 2.38 / np.sqrt(p)
    log_scale = 0.0
    chol = cholesky(step**2 * base).chol
    target = _target_rate(p)
    burnin = config.burnin
    replace_at = burnin // 2

    # burn-in: proposal changes as we go
    burn_states = np.empty((burnin, p))
    window_accepts = 0
    for t in range(burnin):
        prop = x + chol @ prop_rng.standard_normal(p)
        lp = logf(prop)
        if np.log(accept_rng.random()) < lp - lx:
            x, lx = prop, lp
            window_accepts += 1
        burn_states[t] = x
        done = t + 1
        if done % ADAPT_EVERY == 0:
            log_scale += ADAPT_STEP if window_accepts / ADAPT_EVERY > target else -ADAPT_STEP
            window_accepts = 0
        if done == replace_at and done > p + 1:
            emp = np.cov(burn_states[:done].T).reshape(p, p)
            base = (2.38**2 / p) * (emp + COV_JITTER * np.eye(p))
            step, log_scale = 1.0, 0.0
        if done % ADAPT_EVERY == 0 or done == replace_at:
            chol = cholesky(np.exp(2 * log_scale) * step**2 * base).chol

    proposal = cholesky(np.exp(2 * log_scale) * step**2 * base)
    chol = proposal.chol

    # sampling: proposal frozen
    n_total = config.n_draws * config.thin
    increments = prop_rng.standard_normal((n_total, p)) @ chol.T
    log_u = np.log(accept_rng.random(n_total))
    draws = np.empty((config.n_draws, p))
    accepts = 0
    for t in range(n_total):
        prop = x + increments[t]
        lp = logf(prop)
        if log_u[t] < lp - lx:
            x, lx = prop, lp
            accepts += 1
        if (t + 1) % config.thin == 0:
            draws[(t + 1) // config.thin - 1] = x
    rate = accepts / n_total
    if rate < MIN_ACCEPTANCE:
        raise DegenerateChain(f"post-burn-in acceptance rate {rate:.4f} below {MIN_ACCEPTANCE}")
    draws.setflags(write=False)
    return Chain(draws, rate, proposal, config.seed)


def batch_means_ess(x, n_batches=50):
    """Effective sample size of a 1-D series by the batch-means method."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    size = n // n_batches
    if size < 1:
        return float(n)
    trimmed = x[: size * n_batches].reshape(n_batches, size)
    var_batch = trimmed.mean(axis=1).var(ddof=1)
    var = x.var(ddof=1)
    if var_batch <= 0:
        return float(n)
    return float(min(n, n * var / (size * var_batch)))


def write_chain_csv(path, chain: Chain):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"theta{j + 1}" for j in range(chain.dim)])
        for row in chain.draws:
            w.writerow([repr(float(v)) for v in row])


def read_sample_csv(path):
    """Read a header + one-draw-per-row CSV into an (n, p) array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    return np.array(rows, dtype=float)
