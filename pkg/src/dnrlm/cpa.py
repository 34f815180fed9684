"""Contour probability diagnostics.

For a unimodal reference log density ``l`` with mode ``m`` and a threshold
``h`` in (0, 1), the contour region is ``{theta : l(theta) - l(m) > log h}``.
The fraction of reference draws inside it estimates the reference mass T;
the fraction of approximation draws inside the *same* region estimates the
approximation's mass A. Only differences of ``l`` enter, so normalizing
constants never matter.

``log_ref`` callables here are vectorized: they take an (n, p) array and
return an (n,) array. Points outside the support should map to -inf.
"""
import csv
from dataclasses import dataclass

import numpy as np

from dnrlm.errors import DomainError, EmptySample, ModeNotMax

DEFAULT_TARGETS = tuple(round(0.05 * k, 2) for k in range(1, 20))
MODE_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class CpaResult:
    h: np.ndarray
    T: np.ndarray
    A: np.ndarray
    n1: int
    n2: int
    mode_logf: float

    @property
    def diff(self):
        return self.A - self.T

    def max_abs_diff(self):
        return float(np.max(np.abs(self.diff)))

    def mean_abs_diff(self):
        return float(np.mean(np.abs(self.diff)))


def _as_sample(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise EmptySample("sample has no draws")
    return x


def log_ratios(log_ref, mode, sample):
    """``log_ref(theta) - log_ref(mode)`` for every draw; checks the mode."""
    sample = _as_sample(sample)
    mode = np.atleast_1d(np.asarray(mode, dtype=float))
    mode_logf = float(np.asarray(log_ref(mode[None, :])).ravel()[0])
    rho = np.asarray(log_ref(sample), dtype=float) - mode_logf
    if np.any(rho > MODE_SLACK):
        raise ModeNotMax(f"a draw exceeds the supplied mode by {np.nanmax(rho):.3g} in log density")
    rho = np.where(np.isnan(rho), -np.inf, rho)
    return rho, mode_logf


def cpa_run(log_ref, mode, ref_sample, approx_sample, h) -> CpaResult:
    """Reference and approximate contour probabilities at each threshold."""
    h = np.asarray(h, dtype=float)
    if np.any((h <= 0) | (h >= 1)):
        raise DomainError("thresholds must lie strictly inside (0, 1)")
    rho_t, mode_logf = log_ratios(log_ref, mode, ref_sample)
    rho_a, _ = log_ratios(log_ref, mode, approx_sample)
    log_h = np.log(h)
    T = np.array([np.count_nonzero(rho_t > c) for c in log_h]) / rho_t.size
    A = np.array([np.count_nonzero(rho_a > c) for c in log_h]) / rho_a.size
    return CpaResult(h, T, A, rho_t.size, rho_a.size, mode_logf)


def thresholds_for_targets(log_ref, mode, ref_sample, targets=DEFAULT_TARGETS):
    """Thresholds whose empirical reference contour probability hits ``targets``.

    With ``rho`` sorted in descending order and ``k = ceil(q * n1)``, the
    log threshold sits halfway between ``rho_(k)`` and the next smaller
    distinct value, so exactly the draws with ``rho >= rho_(k)`` fall inside
    and T = k / n1 when values are distinct. Repeated states (rejected MCMC
    moves) can push T above that by their multiplicity. Keeping the boundary
    away from every reference draw also makes the counts immune to rounding
    in ``log_ref``, e.g. after adding a constant to it.
    """
    targets = np.asarray(targets, dtype=float)
    if np.any((targets <= 0) | (targets >= 1)) or np.any(np.diff(targets) <= 0):
        raise DomainError("targets must be strictly increasing inside (0, 1)")
    rho, _ = log_ratios(log_ref, mode, ref_sample)
    desc = np.sort(rho)[::-1]
    n1 = desc.size
    k = np.clip(np.ceil(targets * n1 - 1e-9).astype(int), 1, n1)
    upper = desc[k - 1]
    if not np.all(np.isfinite(upper)):
        raise DomainError("too many reference draws outside the support of log_ref")
    # next distinct value below each upper point; -inf when there is none
    idx = np.searchsorted(-desc, -upper, side="right")
    lower = np.where(idx < n1, desc[np.minimum(idx, n1 - 1)], -np.inf)
    log_h = np.where(np.isfinite(lower), 0.5 * (upper + lower), upper - 1.0)
    # a draw may beat the supplied mode by up to MODE_SLACK; keep h below 1
    return np.exp(np.minimum(log_h, -1e-12))


def cpa_difference_series(result: CpaResult):
    """(T_i, A_i - T_i) pairs sorted by ascending T."""
    order = np.argsort(result.T, kind="stable")
    return [(float(result.T[i]), float(result.A[i] - result.T[i])) for i in order]


def write_cpa_csv(path, result: CpaResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "T", "A", "diff"])
        order = np.argsort(result.T, kind="stable")
        for i in order:
            w.writerow([repr(float(result.h[i])), repr(float(result.T[i])), repr(float(result.A[i])), repr(float(result.A[i] - result.T[i]))])


def parse_targets(spec: str):
    """Parse ``start:stop:step`` (inclusive stop) into a tuple of targets."""
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise DomainError(f"targets must look like start:stop:step, got {spec!r}") from None
    if step <= 0 or start > stop:
        raise DomainError(f"bad targets range {spec!r}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 12) for i in range(n))
