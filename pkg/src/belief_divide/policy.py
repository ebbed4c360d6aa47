"""Belief-trajectory simulation, trap detection, and training counterfactuals.

Forward-simulates daily belief paths under fixed parameters.  A trajectory is
"trapped" when the current choice probability falls below a fraction of the
full-information choice probability implied by the true representative
utility: the user has stopped using the tool, receives no more signals, and
the belief can no longer correct itself.

Each trajectory consumes randomness from its own counter-based stream in a
fixed order (training signals, daily decision uniforms, daily signal
innovations, then news draws), so batched and single-trajectory simulation
produce identical paths and results do not depend on worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .core import (
    Belief,
    LatentClass,
    ModelParams,
    UserProfile,
    choice_probability,
    initial_belief,
    representative_utility,
    signal_variance,
    update_belief,
)

__all__ = [
    "SimConfig",
    "Trajectory",
    "TrapEstimate",
    "Scenario",
    "trajectory_stream",
    "apply_training",
    "simulate_trajectory",
    "is_trapped",
    "trap_probability",
    "compare_profiles",
    "fast_learner_profile",
    "slow_learner_profile",
    "trap_comparison_scenarios",
]

_CHUNK = 1024


@dataclass(frozen=True)
class SimConfig:
    """Configuration of one belief-trajectory experiment."""

    days: int = 1000
    opportunities_per_day: int = 18
    pre_training_uses: int = 0
    include_news: bool = False
    news_mean: float = 0.01
    trap_eval_day: int = 365
    trap_ratio: float = 0.01
    n_trajectories: int = 10_000
    n_bootstrap: int = 1_000
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.days < 0 or self.opportunities_per_day < 0 or self.pre_training_uses < 0:
            raise ValueError("days, opportunities_per_day, pre_training_uses must be >= 0")
        if not 0 <= self.trap_eval_day <= self.days:
            raise ValueError("trap_eval_day must lie within the simulated horizon")
        if not 0.0 < self.trap_ratio < 1.0:
            raise ValueError(f"trap_ratio must be in (0, 1), got {self.trap_ratio}")
        if self.n_trajectories < 1 or self.n_bootstrap < 1:
            raise ValueError("n_trajectories and n_bootstrap must be >= 1")
        if self.news_mean < 0:
            raise ValueError("news_mean must be >= 0")


@dataclass(frozen=True)
class Trajectory:
    """One simulated belief path.

    ``belief_means[d]`` / ``belief_variances[d]`` are the belief after day
    ``d``'s end-of-day update; index 0 is the post-training starting belief.
    ``uses[d-1]`` counts the tool choices made during day ``d``.
    """

    belief_means: np.ndarray
    belief_variances: np.ndarray
    uses: np.ndarray
    news: np.ndarray
    trapped: bool
    trap_eval_day: int


@dataclass(frozen=True)
class TrapEstimate:
    """Trapping probability with a percentile-bootstrap confidence interval."""

    label: str
    point: float
    ci_low: float
    ci_high: float
    n_trajectories: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.ci_low <= self.point <= self.ci_high <= 1.0:
            raise ValueError("need 0 <= ci_low <= point <= ci_high <= 1")


@dataclass(frozen=True)
class Scenario:
    """One bar of a trap-probability comparison."""

    label: str
    profile: UserProfile
    config: SimConfig
    v_override: float | None = None


def trajectory_stream(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based per-trajectory stream, independent of scheduling."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(0, index)))
    )


def apply_training(
    belief: Belief,
    n_uses: int,
    v_i: float,
    sigma_s_sq: float,
    rng: np.random.Generator,
) -> Belief:
    """Belief after a pre-rollout training block of ``n_uses`` tool uses.

    Draws one signal per use and applies a single batched conjugate update.
    """
    if n_uses < 0:
        raise ValueError("n_uses must be >= 0")
    if n_uses == 0:
        return belief
    z = rng.standard_normal(n_uses)
    usage_sum = n_uses * v_i + math.sqrt(sigma_s_sq) * float(z.sum())
    return update_belief(belief, usage_sum, n_uses, 0.0, 0, sigma_s_sq, sigma_n_sq=1.0)


def is_trapped(belief_mean: float, v_i: float, c: float, ratio: float) -> bool:
    """Whether the current choice probability is below ``ratio`` times the
    full-information choice probability at the true utility."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    return choice_probability(belief_mean, c) < ratio * choice_probability(v_i, c)


@dataclass(frozen=True)
class _Tables:
    """Pre-drawn randomness for a batch of trajectories (fixed protocol)."""

    training_z: np.ndarray   # (B, pre_training_uses)
    uniforms: np.ndarray     # (B, days, k)
    day_z: np.ndarray        # (B, days)
    news_counts: np.ndarray  # (B, days) int
    news_z: np.ndarray       # (B, days)


def _draw_tables(rngs: list[np.random.Generator], config: SimConfig) -> _Tables:
    B = len(rngs)
    days, k = config.days, config.opportunities_per_day
    training_z = np.empty((B, config.pre_training_uses))
    uniforms = np.empty((B, days, k))
    day_z = np.empty((B, days))
    news_counts = np.zeros((B, days), dtype=np.int64)
    news_z = np.zeros((B, days))
    for b, rng in enumerate(rngs):
        training_z[b] = rng.standard_normal(config.pre_training_uses)
        uniforms[b] = rng.random((days, k))
        day_z[b] = rng.standard_normal(days)
        if config.include_news:
            news_counts[b] = rng.poisson(config.news_mean, days)
            news_z[b] = rng.standard_normal(days)
    return _Tables(training_z, uniforms, day_z, news_counts, news_z)


def _vector_update(mean, var, total_sum, total_count, noise_prec_sum):
    """Masked conjugate update on arrays; zero-variance or no-signal rows stay."""
    mask = (total_count > 0) & (var > 0.0)
    if not np.any(mask):
        return mean, var
    new_mean = mean.copy()
    new_var = var.copy()
    prec = 1.0 / var[mask] + noise_prec_sum[mask]
    new_mean[mask] = (mean[mask] / var[mask] + total_sum[mask]) / prec
    new_var[mask] = 1.0 / prec
    return new_mean, new_var


def _simulate_batch(
    v_i: float,
    sigma_s_sq: float,
    sigma_n_sq: float,
    params: ModelParams,
    config: SimConfig,
    tables: _Tables,
    store_paths: bool,
):
    """Run a batch of trajectories; returns (trapped, paths or None)."""
    B = tables.day_z.shape[0]
    days = config.days
    c = params.c
    sigma_s = math.sqrt(sigma_s_sq)
    sigma_n = math.sqrt(sigma_n_sq)

    start = initial_belief(params)
    mean = np.full(B, start.mean)
    var = np.full(B, start.variance)

    if config.pre_training_uses > 0:
        n = config.pre_training_uses
        usage_sum = n * v_i + sigma_s * tables.training_z.sum(axis=1)
        mean, var = _vector_update(
            mean,
            var,
            usage_sum / sigma_s_sq,
            np.full(B, n),
            np.full(B, n / sigma_s_sq),
        )

    if store_paths:
        path_mean = np.empty((B, days + 1))
        path_var = np.empty((B, days + 1))
        uses_path = np.zeros((B, days), dtype=np.int64)
        news_path = np.zeros((B, days), dtype=np.int64)
        path_mean[:, 0] = mean
        path_var[:, 0] = var

    trapped = np.zeros(B, dtype=bool)
    if config.trap_eval_day == 0:
        trapped = _trapped_now(mean, v_i, c, config.trap_ratio)

    for d in range(days):
        p = expit(mean - c)
        uses = np.sum(tables.uniforms[:, d, :] < p[:, None], axis=1)
        w_news = tables.news_counts[:, d]
        weighted = uses * v_i + sigma_s * np.sqrt(uses) * tables.day_z[:, d]
        total_sum = weighted / sigma_s_sq
        prec_sum = uses / sigma_s_sq
        if config.include_news:
            news_sum = w_news * v_i + sigma_n * np.sqrt(w_news) * tables.news_z[:, d]
            total_sum = total_sum + news_sum / sigma_n_sq
            prec_sum = prec_sum + w_news / sigma_n_sq
        mean, var = _vector_update(mean, var, total_sum, uses + w_news, prec_sum)
        if store_paths:
            path_mean[:, d + 1] = mean
            path_var[:, d + 1] = var
            uses_path[:, d] = uses
            news_path[:, d] = w_news
        if d + 1 == config.trap_eval_day:
            trapped = _trapped_now(mean, v_i, c, config.trap_ratio)

    if store_paths:
        return trapped, (path_mean, path_var, uses_path, news_path)
    return trapped, None


def _trapped_now(mean: np.ndarray, v_i: float, c: float, ratio: float) -> np.ndarray:
    return expit(mean - c) < ratio * choice_probability(v_i, c)


def _resolve_profile(profile: UserProfile, params: ModelParams, v_override: float | None):
    v_i = representative_utility(profile, params) if v_override is None else float(v_override)
    return v_i, signal_variance(profile, params), params.sigma_n_sq


def simulate_trajectory(
    profile: UserProfile,
    params: ModelParams,
    config: SimConfig,
    rng: np.random.Generator,
    v_override: float | None = None,
) -> Trajectory:
    """Simulate one belief path: optional training, then daily decision
    rounds with per-day batched updates (no update on zero-signal days)."""
    v_i, sigma_s_sq, sigma_n_sq = _resolve_profile(profile, params, v_override)
    tables = _draw_tables([rng], config)
    trapped, paths = _simulate_batch(
        v_i, sigma_s_sq, sigma_n_sq, params, config, tables, store_paths=True
    )
    path_mean, path_var, uses, news = paths
    return Trajectory(
        belief_means=path_mean[0],
        belief_variances=path_var[0],
        uses=uses[0],
        news=news[0],
        trapped=bool(trapped[0]),
        trap_eval_day=config.trap_eval_day,
    )


def trap_probability(
    profile: UserProfile,
    params: ModelParams,
    config: SimConfig,
    v_override: float | None = None,
    label: str = "",
) -> TrapEstimate:
    """Fraction of trajectories trapped at the evaluation day, with a 95%
    percentile-bootstrap confidence interval over the trajectory indicators.

    ``v_override`` replaces the profile's representative utility everywhere
    (signal means and the trap reference), which equalizes utilities across
    profiles while keeping their learning speeds.
    """
    v_i, sigma_s_sq, sigma_n_sq = _resolve_profile(profile, params, v_override)
    trapped = np.empty(config.n_trajectories, dtype=bool)
    for lo in range(0, config.n_trajectories, _CHUNK):
        hi = min(lo + _CHUNK, config.n_trajectories)
        rngs = [trajectory_stream(config.master_seed, i) for i in range(lo, hi)]
        tables = _draw_tables(rngs, config)
        flags, _ = _simulate_batch(
            v_i, sigma_s_sq, sigma_n_sq, params, config, tables, store_paths=False
        )
        trapped[lo:hi] = flags

    point = float(trapped.mean())
    boot_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(config.master_seed, spawn_key=(1,)))
    )
    n = trapped.size
    boot_means = np.empty(config.n_bootstrap)
    for b in range(config.n_bootstrap):
        boot_means[b] = trapped[boot_rng.integers(0, n, size=n)].mean()
    ci_low, ci_high = np.quantile(boot_means, [0.025, 0.975])
    # degenerate indicator vectors bootstrap to a zero-width interval around
    # the point; guard against quantile interpolation stepping over it
    ci_low = min(float(ci_low), point)
    ci_high = max(float(ci_high), point)
    return TrapEstimate(
        label=label,
        point=point,
        ci_low=ci_low,
        ci_high=ci_high,
        n_trajectories=n,
    )


def compare_profiles(scenarios: list[Scenario], params: ModelParams) -> list[TrapEstimate]:
    """Trap estimate per scenario; scenarios sharing a master seed share
    trajectory-level random streams (common random numbers across bars)."""
    if not scenarios:
        raise ValueError("scenarios list must be nonempty")
    return [
        trap_probability(s.profile, params, s.config, v_override=s.v_override, label=s.label)
        for s in scenarios
    ]


def fast_learner_profile() -> UserProfile:
    """Young, male, white, highly educated IT worker in class 2."""
    return UserProfile(high_edu=True, age=28, male=True, white=True, it=True,
                       latent_class=LatentClass.CLASS2)


def slow_learner_profile() -> UserProfile:
    """Older, female, non-white, non-IT, lower-educated profile in class 2."""
    return UserProfile(high_edu=False, age=48, male=False, white=False, it=False,
                       latent_class=LatentClass.CLASS2)


def trap_comparison_scenarios(params: ModelParams, config: SimConfig) -> list[Scenario]:
    """The standard five-bar comparison: fast learner, slow learner, slow
    learner with the fast learner's utility, and slow learner after 100 and
    150 training uses."""
    fast = fast_learner_profile()
    slow = slow_learner_profile()
    v_fast = representative_utility(fast, params)
    base = replace(config, pre_training_uses=0)
    return [
        Scenario("fast", fast, base),
        Scenario("slow", slow, base),
        Scenario("slow_fast_utility", slow, base, v_override=v_fast),
        Scenario("slow_train_100", slow, replace(config, pre_training_uses=100)),
        Scenario("slow_train_150", slow, replace(config, pre_training_uses=150)),
    ]
