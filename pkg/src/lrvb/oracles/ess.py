"""Effective sample size and Monte Carlo standard errors."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import DegenerateChainWarning, TooFewDraws

MIN_DRAWS = 100


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation at every lag, via zero-padded FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return acov / acov[0]


def ess(draws) -> float:
    """Effective sample size by Geyer's initial positive sequence.

    ``n / (1 + 2 sum_t rho_t)``, with the sum cut at the first lag pair
    ``rho_{2k} + rho_{2k+1}`` that is not positive.  Capped at ``n``.  A
    constant chain has ESS 0 (with a warning).
    """
    x = np.asarray(draws, dtype=float).ravel()
    n = x.size
    if n < MIN_DRAWS:
        raise TooFewDraws(f"need at least {MIN_DRAWS} draws, got {n}")
    if np.ptp(x) == 0.0:
        warnings.warn("constant chain; ESS defined as 0", DegenerateChainWarning, stacklevel=2)
        return 0.0
    rho = autocorrelation(x)
    m = (n - 1) // 2
    pairs = rho[0 : 2 * m : 2] + rho[1 : 2 * m + 1 : 2]
    nonpos = np.flatnonzero(pairs <= 0)
    k = nonpos[0] if nonpos.size else pairs.size
    tau = -1.0 + 2.0 * pairs[:k].sum()
    return float(min(n, n / tau)) if tau > 0 else float(n)


def batch_means_se(values, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    v = np.asarray(values, dtype=float).ravel()
    b = v.size // n_batches
    if b < 2:
        raise TooFewDraws("too few draws for batch means")
    means = v[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def sd_standard_error(draws, n_batches: int = 50) -> float:
    """Monte Carlo standard error of the sample standard deviation.

    Batch means on the squared deviations give the error of the variance;
    the delta method converts it to the standard deviation scale.
    """
    x = np.asarray(draws, dtype=float).ravel()
    sd = x.std()
    if sd == 0:
        return 0.0
    return batch_means_se((x - x.mean()) ** 2, n_batches) / (2.0 * sd)


def cov_standard_error(a, b, n_batches: int = 50) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return batch_means_se((a - a.mean()) * (b - b.mean()), n_batches)
