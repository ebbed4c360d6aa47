"""Model primitives: utilities, signal variances, beliefs, and choice probabilities.

Everything in this module is a pure function of its arguments, so all
operations are safe to call concurrently.  The model has two latent classes
that shift the utility intercept and the usage-signal log-variance intercept;
demographics enter the utility linearly and the signal variance
log-linearly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

__all__ = [
    "LatentClass",
    "UserProfile",
    "ModelParams",
    "Belief",
    "FREE_PARAM_NAMES",
    "representative_utility",
    "signal_variance",
    "class2_probability",
    "initial_belief",
    "update_belief",
    "choice_probability",
    "day_log_likelihood",
]

# exp() overflows float64 just above this exponent
_MAX_LOG = math.log(math.sqrt(1.7976931348623157e308))  # conservative half-range


class LatentClass(enum.Enum):
    """Two-class unobserved heterogeneity label."""

    CLASS1 = 1
    CLASS2 = 2


@dataclass(frozen=True)
class UserProfile:
    """Demographic covariates plus (optionally) the latent-class label.

    ``latent_class`` is known for simulated ground truth but is unobserved in
    estimation input, where it stays ``None`` and is integrated out.
    """

    high_edu: bool
    age: int
    male: bool
    white: bool
    it: bool
    latent_class: LatentClass | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.age <= 120:
            raise ValueError(f"age must be in [0, 120], got {self.age}")

    def covariates(self) -> tuple[float, float, float, float, float]:
        """Covariate vector in fixed order: high_edu, age, male, white, it."""
        return (
            float(self.high_edu),
            float(self.age),
            float(self.male),
            float(self.white),
            float(self.it),
        )

    def with_class(self, latent_class: LatentClass | None) -> "UserProfile":
        return replace(self, latent_class=latent_class)


# Order of the 17 free parameters in optimizer vectors and reports.
FREE_PARAM_NAMES: tuple[str, ...] = (
    "lam",
    "c",
    "alpha0",
    "log_delta_alpha0",
    "alpha1",
    "alpha2",
    "alpha3",
    "alpha4",
    "alpha5",
    "log_sigma_n_sq",
    "gamma0",
    "delta_gamma0",
    "gamma1",
    "gamma2",
    "gamma3",
    "gamma4",
    "gamma5",
)


@dataclass(frozen=True)
class ModelParams:
    """Full structural parameter vector plus the fixed prior hyperparameters.

    The class-2 utility increment is parameterized in logs
    (``log_delta_alpha0``), which keeps the increment positive and pins the
    class labels; the news-signal variance is likewise kept in logs
    internally and converted to levels only at the I/O boundary.  ``v0`` and
    ``log_sigma0_sq`` are identification normalizations and are never free in
    optimization.
    """

    c: float
    alpha0: float
    log_delta_alpha0: float
    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    alpha5: float
    gamma0: float
    delta_gamma0: float
    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    gamma5: float
    log_sigma_n_sq: float
    lam: float
    v0: float = 0.0
    log_sigma0_sq: float = 4.0

    def __post_init__(self) -> None:
        for name in FREE_PARAM_NAMES + ("v0", "log_sigma0_sq"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"parameter {name} must be finite, got {value}")

    @property
    def delta_alpha0(self) -> float:
        return math.exp(self.log_delta_alpha0)

    @property
    def sigma_n_sq(self) -> float:
        return math.exp(self.log_sigma_n_sq)

    @property
    def sigma0_sq(self) -> float:
        return math.exp(self.log_sigma0_sq)

    def utility_coefficients(self) -> tuple[float, float, float, float, float]:
        return (self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5)

    def variance_coefficients(self) -> tuple[float, float, float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4, self.gamma5)

    def free_vector(self) -> list[float]:
        """Free parameters in canonical order (fixed normalizations excluded)."""
        return [getattr(self, name) for name in FREE_PARAM_NAMES]

    def with_free_vector(self, vector) -> "ModelParams":
        """Replace the 17 free parameters; fixed hyperparameters carry over."""
        if len(vector) != len(FREE_PARAM_NAMES):
            raise ValueError(
                f"expected {len(FREE_PARAM_NAMES)} free parameters, got {len(vector)}"
            )
        return replace(self, **{n: float(v) for n, v in zip(FREE_PARAM_NAMES, vector)})


@dataclass(frozen=True)
class Belief:
    """Normal belief state over the tool's representative utility."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mean):
            raise ValueError(f"belief mean must be finite, got {self.mean}")
        if not self.variance >= 0.0:
            raise ValueError(f"belief variance must be >= 0, got {self.variance}")


def _require_class(profile: UserProfile) -> LatentClass:
    if profile.latent_class is None:
        raise ValueError("profile.latent_class must be assigned for this operation")
    return profile.latent_class


def representative_utility(profile: UserProfile, params: ModelParams) -> float:
    """Per-use representative utility of the tool for this profile.

    Linear in the demographics, with a positive class-2 intercept shift
    ``exp(log_delta_alpha0)``.
    """
    latent_class = _require_class(profile)
    value = params.alpha0
    if latent_class is LatentClass.CLASS2:
        value += params.delta_alpha0
    for coef, x in zip(params.utility_coefficients(), profile.covariates()):
        value += coef * x
    return value


def signal_variance(profile: UserProfile, params: ModelParams) -> float:
    """Variance of one usage signal; exponential in a linear index.

    Larger values mean each experience moves the belief less, i.e. slower
    learning.  Raises ``OverflowError`` when the exponent leaves the finite
    float64 range.
    """
    latent_class = _require_class(profile)
    exponent = params.gamma0
    if latent_class is LatentClass.CLASS2:
        exponent += params.delta_gamma0
    for coef, x in zip(params.variance_coefficients(), profile.covariates()):
        exponent += coef * x
    if exponent > _MAX_LOG * 2:
        raise OverflowError(
            f"signal-variance exponent {exponent:.3f} exceeds the finite float64 range"
        )
    return math.exp(exponent)


def _logistic(x: float) -> float:
    # branch on sign so exp() never overflows
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x: float) -> float:
    # log(1 + exp(x)) without overflow
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def class2_probability(params: ModelParams) -> float:
    """Probability of membership in latent class 2 (class 1 gets the rest)."""
    return _logistic(params.lam)


def initial_belief(params: ModelParams) -> Belief:
    """Common prior belief before any tool experience or news exposure."""
    return Belief(mean=params.v0, variance=math.exp(params.log_sigma0_sq))


def update_belief(
    prior: Belief,
    usage_sum: float,
    usage_count: int,
    news_sum: float,
    news_count: int,
    sigma_s_sq: float,
    sigma_n_sq: float,
) -> Belief:
    """Conjugate normal update for one batch of usage and news signals.

    Precisions add: the posterior precision is the prior precision plus
    ``count / variance`` for each signal source, and the posterior mean is the
    precision-weighted average of the prior mean and the signal sums.  With no
    signals, or with a degenerate (zero-variance) prior, the prior is returned
    unchanged.
    """
    if usage_count < 0 or news_count < 0:
        raise ValueError("signal counts must be non-negative")
    if not (math.isfinite(usage_sum) and math.isfinite(news_sum)):
        raise ValueError("signal sums must be finite")
    if usage_count == 0 and news_count == 0:
        return prior
    if usage_count > 0 and not sigma_s_sq > 0.0:
        raise ValueError(f"usage-signal variance must be positive, got {sigma_s_sq}")
    if news_count > 0 and not sigma_n_sq > 0.0:
        raise ValueError(f"news-signal variance must be positive, got {sigma_n_sq}")
    if prior.variance == 0.0:
        return prior

    precision = 1.0 / prior.variance + usage_count / sigma_s_sq + news_count / sigma_n_sq
    mean = (
        prior.mean / prior.variance + usage_sum / sigma_s_sq + news_sum / sigma_n_sq
    ) / precision
    return Belief(mean=mean, variance=1.0 / precision)


def choice_probability(belief_mean: float, c: float) -> float:
    """Probability of picking the tool over the outside option for one decision.

    Logit form in the difference of perceived representative utilities,
    computed through the sign-branched logistic so large magnitudes cannot
    overflow.
    """
    if not (math.isfinite(belief_mean) and math.isfinite(c)):
        raise ValueError("choice_probability requires finite inputs")
    return _logistic(belief_mean - c)


def day_log_likelihood(belief_mean: float, c: float, w_total: int, w_gpt: int) -> float:
    """Log-likelihood of a day's choice counts given the start-of-day belief.

    ``w_gpt`` tool choices and ``w_total - w_gpt`` outside choices, each an
    independent logit decision at the same belief.  Accumulated in log space
    (``log p = x - softplus(x)`` with ``x`` the utility difference) so nothing
    underflows.  A day with no decision opportunities contributes zero.
    """
    if w_total < 0 or w_gpt < 0 or w_gpt > w_total:
        raise ValueError(f"need 0 <= w_gpt <= w_total, got w_gpt={w_gpt}, w_total={w_total}")
    if w_total == 0:
        return 0.0
    x = belief_mean - c
    softplus_x = _softplus(x)
    log_p = x - softplus_x
    log_1mp = -softplus_x
    return w_gpt * log_p + (w_total - w_gpt) * log_1mp
