"""ESS, total variation, traversal and replicate-variance diagnostics.

The IAT estimator is Geyer's initial monotone positive sequence applied to
FFT autocorrelations.  For lifted (non-reversible) chains it is a
descriptive statistic: it is not consistent there, and tends to understate
the ESS when the autocorrelation oscillates.  :func:`asymptotic_ess` gives the
exact value for a finite chain with known transition matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ChainTrace

MIN_SERIES = 10
MIN_SWITCHES = 100


class InsufficientDataError(ValueError):
    """Raised when a series is too short for the requested statistic."""


@dataclass(frozen=True)
class IATEstimate:
    """Integrated autocorrelation time with interpretation flags.

    ``raw`` is the unclamped estimate; ``value`` is clamped below at 1.
    """

    value: float
    raw: float
    lags: int
    degenerate: bool = False
    antithetic: bool = False
    periodic: int = 0

    @property
    def ess(self) -> float:
        return 1.0 / self.value


def autocorrelation(series: np.ndarray) -> np.ndarray:
    """Biased sample autocorrelation at lags 0..n-1 (zero-padded FFT)."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / acov[0]


def _period(x: np.ndarray, rho: np.ndarray) -> int:
    """Smallest exact period of ``x`` if it repeats at least twice, else 0."""
    n = len(x)
    half = n // 2
    if half < 2:
        return 0
    # An exact period p gives rho[p] = (n - p) / n up to rounding.
    lags = np.arange(1, half + 1)
    cand = lags[rho[1:half + 1] >= (n - lags) / n - 1e-9]
    for p in cand:
        if np.array_equal(x[p:], x[:-p]):
            return int(p)
    return 0


def iat(series) -> IATEstimate:
    """Initial-monotone-positive-sequence IAT of a scalar series."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < MIN_SERIES:
        raise InsufficientDataError(f"need at least {MIN_SERIES} values, got {n}")
    if np.all(x == x[0]):
        return IATEstimate(float(n), float(n), 0, degenerate=True)
    rho = autocorrelation(x)
    m = n // 2
    pairs = rho[:2 * m].reshape(m, 2).sum(axis=1)
    nonpos = np.flatnonzero(pairs <= 0)
    stop = int(nonpos[0]) if len(nonpos) else m
    if stop == 0:
        # First pair already nonpositive: strongly antithetic series.
        raw = 2.0 * pairs[0] - 1.0
    else:
        raw = 2.0 * np.minimum.accumulate(pairs[:stop]).sum() - 1.0
    period = _period(x, rho)
    antithetic = raw < 1.0
    return IATEstimate(max(float(raw), 1.0), float(raw), 2 * stop, antithetic=antithetic,
                       periodic=period)


def ess(series) -> float:
    return iat(series).ess


def ess_per_switch_iteration(trace: ChainTrace) -> IATEstimate:
    """IAT of k over the post-burn-in switch-proposal iterations.

    Use ``.ess`` on the result for ESS per switch iteration.
    """
    path = trace.switch_k_path()
    if len(path) < MIN_SWITCHES:
        raise InsufficientDataError(
            f"trace has {len(path)} post-burn-in switch proposals, need {MIN_SWITCHES}")
    return iat(path)


def ess_whole_chain(trace: ChainTrace) -> IATEstimate:
    return iat(trace.k[trace.post_burn_in()])


def empirical_pmf(ks, k_min: int, k_max: int) -> np.ndarray:
    ks = np.asarray(ks, dtype=np.int64)
    if len(ks) == 0:
        raise InsufficientDataError("empty path")
    if ks.min() < k_min or ks.max() > k_max:
        raise ValueError(f"path leaves [{k_min}, {k_max}]")
    return np.bincount(ks - k_min, minlength=k_max - k_min + 1) / len(ks)


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


def relative_tv_difference(tv_p: float, tv_ideal: float) -> float:
    """(tv_p - tv_ideal) / tv_ideal; undefined when tv_ideal is 0."""
    if not tv_ideal > 0:
        raise ZeroDivisionError("relative TV difference is undefined for a zero reference TV")
    return (tv_p - tv_ideal) / tv_ideal


def roundtrip_lengths(k_path, low: int, high: int) -> np.ndarray:
    """Lengths of completed low -> high -> low excursions.

    An excursion is timed from the first step with k != ``low`` to the step
    that returns to ``low``; only those that touch ``high`` count.  Lengths
    are in steps of ``k_path``.
    """
    k = np.asarray(k_path)
    out = []
    start = None
    seen_high = False
    for t in range(1, len(k)):
        if k[t - 1] == low and k[t] != low:
            start, seen_high = t, False
        if start is None:
            continue
        if k[t] == high:
            seen_high = True
        if k[t] == low and k[t - 1] != low:
            if seen_high:
                out.append(t - start)
            start = None
    return np.array(out, dtype=np.int64)


def roundtrip_stats(k_path, low: int, high: int) -> tuple[int, float]:
    """(count, mean length) of completed round trips; mean is nan if none."""
    lengths = roundtrip_lengths(k_path, low, high)
    if len(lengths) == 0:
        return 0, math.nan
    return len(lengths), float(lengths.mean())


@dataclass(frozen=True)
class VarianceEstimate:
    variance: float
    ci_low: float
    ci_high: float
    replicates: int


def _var(x: np.ndarray, axis=-1) -> np.ndarray:
    return np.var(x, axis=axis, ddof=1)


def replicate_variance(estimates, rng: np.random.Generator | None = None,
                       n_boot: int = 2000, level: float = 0.95) -> VarianceEstimate:
    """Sample variance of replicate estimates with a percentile bootstrap CI."""
    x = np.asarray(estimates, dtype=float)
    if len(x) < 10:
        raise InsufficientDataError(f"need at least 10 replicates, got {len(x)}")
    rng = np.random.default_rng(0) if rng is None else rng
    boot = _var(x[rng.integers(0, len(x), size=(n_boot, len(x)))])
    a = (1 - level) / 2
    lo, hi = np.quantile(boot, [a, 1 - a])
    return VarianceEstimate(float(_var(x)), float(lo), float(hi), len(x))


def variance_ratio_upper(a, b, rng: np.random.Generator | None = None, n_boot: int = 4000,
                         level: float = 0.95) -> tuple[float, float]:
    """Point estimate and one-sided upper bootstrap bound of var(a) / var(b).

    Replicates of the two groups are resampled independently.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    va = _var(a[rng.integers(0, len(a), size=(n_boot, len(a)))])
    vb = _var(b[rng.integers(0, len(b), size=(n_boot, len(b)))])
    return float(_var(a) / _var(b)), float(np.quantile(va / vb, level))


def mean_difference_lower(a, b, level: float = 0.95) -> tuple[float, float]:
    """mean(a) - mean(b) and its one-sided lower bound (Welch, normal quantile)."""
    from scipy.stats import norm

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a.mean() - b.mean()
    se = math.sqrt(_var(a) / len(a) + _var(b) / len(b))
    return float(diff), float(diff - norm.ppf(level) * se)


def asymptotic_ess(P: np.ndarray, pi: np.ndarray, f: np.ndarray) -> float:
    """Exact asymptotic ESS per step of f under a finite ergodic chain.

    Solves the Poisson equation (I - P + 1 pi^T) g = f - pi(f); the
    asymptotic variance is 2 pi(f_c g) - pi(f_c^2).
    """
    n = len(pi)
    fc = np.asarray(f, dtype=float) - pi @ f
    A = np.eye(n) - P + np.outer(np.ones(n), pi)
    g = np.linalg.solve(A, fc)
    var_f = pi @ (fc * fc)
    sigma2 = 2.0 * pi @ (fc * g) - var_f
    if sigma2 <= 1e-12 * var_f:
        return math.inf
    return float(var_f / sigma2)


@dataclass(frozen=True)
class DiagnosticsReport:
    ess: float
    iat: float
    pmf: np.ndarray
    tv: float
    relative_tv: float
    acceptance_rate: float
    roundtrips: int
    mean_roundtrip: float
    flags: tuple[str, ...] = ()

    def rows(self) -> list[tuple[str, float]]:
        return [("ess", self.ess), ("iat", self.iat), ("tv", self.tv),
                ("relative_tv", self.relative_tv), ("acceptance_rate", self.acceptance_rate),
                ("roundtrips", float(self.roundtrips)), ("mean_roundtrip", self.mean_roundtrip)]


def report(trace: ChainTrace, k_min: int, k_max: int, reference: np.ndarray | None = None,
           tv_ideal: float | None = None) -> DiagnosticsReport:
    est = ess_per_switch_iteration(trace)
    ks = trace.k[trace.post_burn_in()]
    pmf = empirical_pmf(ks, k_min, k_max)
    tv = tv_distance(pmf, reference) if reference is not None else math.nan
    rel = relative_tv_difference(tv, tv_ideal) if tv_ideal else math.nan
    n_rt, mean_rt = roundtrip_stats(trace.switch_k_path(), k_min, k_max)
    flags = tuple(name for name, on in (("degenerate", est.degenerate),
                                        ("antithetic", est.antithetic),
                                        ("periodic", est.periodic > 0)) if on)
    return DiagnosticsReport(est.ess, est.value, pmf, tv, rel, trace.acceptance_rate(),
                             n_rt, mean_rt, flags)
