"""Independent brute-force oracles shared across test modules.

These deliberately avoid the library's own update formulas so they can serve
as external checks on them.
"""

from __future__ import annotations

import numpy as np


def grid_posterior_moments(
    prior_mean: float,
    prior_var: float,
    signals: list[tuple[float, float]],
    n_points: int = 100_000,
    span_sds: float = 8.0,
) -> tuple[float, float]:
    """Posterior mean/variance by discretizing the normal-normal posterior.

    The grid covers the prior mean plus/minus ``span_sds`` prior standard
    deviations; the posterior density is evaluated pointwise and normalized
    by direct summation.
    """
    sd = np.sqrt(prior_var)
    grid = np.linspace(prior_mean - span_sds * sd, prior_mean + span_sds * sd, n_points)
    log_density = -0.5 * (grid - prior_mean) ** 2 / prior_var
    for value, variance in signals:
        log_density = log_density - 0.5 * (grid - value) ** 2 / variance
    log_density -= log_density.max()
    weights = np.exp(log_density)
    weights /= weights.sum()
    mean = float(np.sum(grid * weights))
    variance = float(np.sum((grid - mean) ** 2 * weights))
    return mean, variance


def logistic_highprec(x: float) -> float:
    """Reference logistic via mpmath at 50 digits, rounded to float."""
    from mpmath import mp, mpf, exp

    mp.dps = 50
    value = 1 / (1 + exp(-mpf(repr(x))))
    return float(value)
