"""Synthetic panel generation from the structural model.

Used as the fixture factory for tests and as the ground-truth oracle for
parameter recovery.  Users are simulated independently, each from its own
counter-based random stream derived from ``(master_seed, user_index)``, so
datasets are bit-reproducible regardless of worker count or schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    Belief,
    LatentClass,
    ModelParams,
    UserProfile,
    choice_probability,
    class2_probability,
    initial_belief,
    representative_utility,
    signal_variance,
    update_belief,
)

__all__ = [
    "CountProcess",
    "ProfileSampler",
    "PopulationSpec",
    "DayObservation",
    "UserPanel",
    "UserGroundTruth",
    "Dataset",
    "user_stream",
    "draw_counts",
    "simulate_user_panel",
    "simulate_dataset",
]


@dataclass(frozen=True)
class CountProcess:
    """Daily count process: a fixed count, a Poisson rate, or nothing."""

    kind: str  # "fixed" | "poisson" | "none"
    value: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "poisson", "none"):
            raise ValueError(f"unknown count process kind: {self.kind!r}")
        if self.kind == "poisson" and self.value < 0:
            raise ValueError(f"poisson mean must be >= 0, got {self.value}")
        if self.kind == "fixed" and (self.value < 0 or self.value != int(self.value)):
            raise ValueError(f"fixed count must be a non-negative integer, got {self.value}")

    @classmethod
    def fixed(cls, count: int) -> "CountProcess":
        return cls("fixed", float(count))

    @classmethod
    def poisson(cls, mean: float) -> "CountProcess":
        return cls("poisson", float(mean))

    @classmethod
    def none(cls) -> "CountProcess":
        return cls("none")


def draw_counts(process: CountProcess, rng: np.random.Generator) -> int:
    """Draw one daily count from the process."""
    if process.kind == "fixed":
        return int(process.value)
    if process.kind == "poisson":
        return int(rng.poisson(process.value))
    return 0


@dataclass(frozen=True)
class ProfileSampler:
    """Independent covariate marginals for synthetic populations.

    Defaults follow the learning-sample summary statistics: binary marginals
    for education, gender, race, and IT employment, and age as a clamped
    normal on [18, 88].
    """

    p_high_edu: float = 0.57
    p_male: float = 0.60
    p_white: float = 0.66
    p_it: float = 0.09
    age_mean: float = 39.11
    age_sd: float = 13.62
    age_min: int = 18
    age_max: int = 88

    def __post_init__(self) -> None:
        for name in ("p_high_edu", "p_male", "p_white", "p_it"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.age_sd < 0:
            raise ValueError("age_sd must be >= 0")

    def sample(self, rng: np.random.Generator) -> UserProfile:
        """Sample covariates only; the latent class is assigned by the caller."""
        age = int(round(min(max(rng.normal(self.age_mean, self.age_sd), self.age_min), self.age_max)))
        return UserProfile(
            high_edu=bool(rng.random() < self.p_high_edu),
            age=age,
            male=bool(rng.random() < self.p_male),
            white=bool(rng.random() < self.p_white),
            it=bool(rng.random() < self.p_it),
        )


@dataclass(frozen=True)
class PopulationSpec:
    """Configuration for one synthetic panel dataset."""

    n_users: int
    horizon_days: int
    opportunity_process: CountProcess = field(default_factory=lambda: CountProcess.poisson(18.0))
    news_process: CountProcess = field(default_factory=lambda: CountProcess.poisson(0.01))
    profile_sampler: ProfileSampler = field(default_factory=ProfileSampler)
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_users < 0 or self.horizon_days < 0:
            raise ValueError("n_users and horizon_days must be non-negative")


@dataclass(frozen=True)
class DayObservation:
    """One user-day: decision opportunities, tool choices, news clicks."""

    day: int
    w_total: int
    w_gpt: int
    w_news: int

    def __post_init__(self) -> None:
        if self.day < 0:
            raise ValueError(f"day must be >= 0, got {self.day}")
        if min(self.w_total, self.w_gpt, self.w_news) < 0:
            raise ValueError("counts must be non-negative")
        if self.w_gpt > self.w_total:
            raise ValueError(f"w_gpt={self.w_gpt} exceeds w_total={self.w_total}")


@dataclass(frozen=True)
class UserPanel:
    """Ordered daily observations for one user."""

    user_id: str
    profile: UserProfile
    observations: tuple[DayObservation, ...]

    def __post_init__(self) -> None:
        days = [o.day for o in self.observations]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError(f"days must be strictly increasing for user {self.user_id}")

    def total_uses(self) -> int:
        return sum(o.w_gpt for o in self.observations)

    def total_news(self) -> int:
        return sum(o.w_news for o in self.observations)


@dataclass(frozen=True)
class UserGroundTruth:
    """Latent quantities behind one simulated panel.

    ``belief_means[d]`` / ``belief_variances[d]`` hold the belief after the
    day-``d`` update, with index 0 the prior; ``usage_signal_sums[d]`` and
    ``news_signal_sums[d]`` are the realized signal totals of day ``d+1`` so
    the update recursion can be replayed exactly.
    """

    user_id: str
    latent_class: LatentClass
    representative_utility: float
    signal_variance: float
    belief_means: np.ndarray
    belief_variances: np.ndarray
    usage_signal_sums: np.ndarray
    news_signal_sums: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """A collection of user panels in a fixed order."""

    panels: tuple[UserPanel, ...]

    def __len__(self) -> int:
        return len(self.panels)

    def __iter__(self):
        return iter(self.panels)

    def user_ids(self) -> tuple[str, ...]:
        return tuple(p.user_id for p in self.panels)


def user_stream(master_seed: int, user_index: int) -> np.random.Generator:
    """Counter-based per-user stream; independent of worker count/schedule."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(user_index,)))
    )


def simulate_user_panel(
    profile: UserProfile,
    params: ModelParams,
    spec: PopulationSpec,
    rng: np.random.Generator,
    user_id: str = "u00000",
) -> tuple[UserPanel, UserGroundTruth]:
    """Simulate one user's daily panel and the latent truth behind it.

    Per day: draw opportunity and news counts, make each decision an
    independent Bernoulli at the start-of-day belief (beliefs are constant
    within a day), draw one normal signal per realized use and per news
    click, then apply a single end-of-day conjugate update.
    """
    if profile.latent_class is None:
        raise ValueError("simulate_user_panel requires an assigned latent class")
    v_i = representative_utility(profile, params)
    sigma_s_sq = signal_variance(profile, params)
    sigma_n_sq = params.sigma_n_sq
    sigma_s = math.sqrt(sigma_s_sq)
    sigma_n = math.sqrt(sigma_n_sq)

    horizon = spec.horizon_days
    belief = initial_belief(params)
    belief_means = np.empty(horizon + 1)
    belief_vars = np.empty(horizon + 1)
    belief_means[0] = belief.mean
    belief_vars[0] = belief.variance
    usage_sums = np.zeros(horizon)
    news_sums = np.zeros(horizon)

    observations = []
    for day in range(horizon):
        w_total = draw_counts(spec.opportunity_process, rng)
        w_news = draw_counts(spec.news_process, rng)
        p = choice_probability(belief.mean, params.c)
        w_gpt = int(rng.binomial(w_total, p)) if w_total > 0 else 0
        usage_sum = float(np.sum(v_i + sigma_s * rng.standard_normal(w_gpt))) if w_gpt else 0.0
        news_sum = float(np.sum(v_i + sigma_n * rng.standard_normal(w_news))) if w_news else 0.0
        observations.append(DayObservation(day=day, w_total=w_total, w_gpt=w_gpt, w_news=w_news))
        belief = update_belief(belief, usage_sum, w_gpt, news_sum, w_news, sigma_s_sq, sigma_n_sq)
        belief_means[day + 1] = belief.mean
        belief_vars[day + 1] = belief.variance
        usage_sums[day] = usage_sum
        news_sums[day] = news_sum

    panel = UserPanel(user_id=user_id, profile=profile, observations=tuple(observations))
    truth = UserGroundTruth(
        user_id=user_id,
        latent_class=profile.latent_class,
        representative_utility=v_i,
        signal_variance=sigma_s_sq,
        belief_means=belief_means,
        belief_variances=belief_vars,
        usage_signal_sums=usage_sums,
        news_signal_sums=news_sums,
    )
    return panel, truth


def simulate_dataset(
    spec: PopulationSpec, params: ModelParams
) -> tuple[Dataset, tuple[UserGroundTruth, ...]]:
    """Simulate a full population: sample profiles, assign classes, run panels.

    The returned panels carry profiles with the latent class stripped (it is
    unobservable to the estimator); classes live in the ground-truth table.
    Fully reproducible from ``spec.master_seed``.
    """
    if spec.n_users == 0:
        raise ValueError("n_users must be >= 1")
    p_class2 = class2_probability(params)
    panels = []
    truths = []
    for i in range(spec.n_users):
        rng = user_stream(spec.master_seed, i)
        profile = spec.profile_sampler.sample(rng)
        latent = LatentClass.CLASS2 if rng.random() < p_class2 else LatentClass.CLASS1
        profile = profile.with_class(latent)
        user_id = f"u{i:05d}"
        panel, truth = simulate_user_panel(profile, params, spec, rng, user_id=user_id)
        panels.append(replace(panel, profile=panel.profile.with_class(None)))
        truths.append(truth)
    return Dataset(panels=tuple(panels)), tuple(truths)
