"""Simulated panel log-likelihood with common random numbers.

Signals are never observed, so per-path likelihoods are simulated: for each
of ``R`` draws, latent signals are reconstructed as ``value + sd * z`` from a
fixed store of standard-normal innovations (the CRN store).  Reusing the same
innovations for every parameter vector makes the simulated objective a smooth
function of the parameters.

Two mixing conventions are supported for the latent classes:

* ``per_user`` (default contract): the class-conditional *path* likelihoods
  are mixed once per user and the mixed path likelihood is averaged over
  draws, the statistically coherent treatment of a trait that is constant
  within user.
* ``per_observation``: the literal per-period plug-in objective: every
  user-day likelihood is approximated by its own draw average (classes mixed
  within the day) before logs are taken and the product over days is formed.
  Its Monte Carlo noise does not compound with panel length, which makes it
  the practical choice for long-panel estimation.

Either way, accumulation is in log space throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _kernels
from .core import (
    LatentClass,
    ModelParams,
    day_log_likelihood,
    initial_belief,
    representative_utility,
    signal_variance,
    update_belief,
)
from .dgp import Dataset, UserPanel

__all__ = [
    "CrnStore",
    "CrnLayer",
    "build_crn",
    "conditional_path_loglik",
    "user_simulated_loglik",
    "total_simulated_loglik",
    "SimulatedLikelihood",
]

_EXP_CLIP = 700.0  # keeps exp() finite during optimizer excursions


class CrnLayer(NamedTuple):
    """One draw's innovations for one user."""

    usage: np.ndarray
    news: np.ndarray


@dataclass(frozen=True)
class CrnStore:
    """Immutable store of standard-normal innovations for simulated likelihoods.

    Innovations are indexed by (user, slot) with one layer per simulation
    draw.  They are materialized lazily from counter-based streams keyed by
    ``(seed, user_index, kind)``, so identical seeds always reproduce
    identical stores and no large arrays are retained.
    """

    seed: int
    R: int
    user_ids: tuple[str, ...]
    usage_capacity: np.ndarray
    news_capacity: np.ndarray

    @cached_property
    def _index(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.user_ids)}

    def index_of(self, user_id: str) -> int:
        try:
            return self._index[user_id]
        except KeyError:
            raise KeyError(f"user {user_id!r} not covered by this CRN store") from None

    def _draw(self, user_index: int, kind: int, capacity: int) -> np.ndarray:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(user_index, kind)))
        )
        return rng.standard_normal((self.R, capacity))

    def usage_innovations(self, user_index: int) -> np.ndarray:
        """(R, capacity) standard normals for the user's usage-signal slots."""
        return self._draw(user_index, 0, int(self.usage_capacity[user_index]))

    def news_innovations(self, user_index: int) -> np.ndarray:
        return self._draw(user_index, 1, int(self.news_capacity[user_index]))

    def layer(self, user_index: int, r: int) -> CrnLayer:
        """Innovations of draw ``r`` for one user."""
        if not 0 <= r < self.R:
            raise IndexError(f"draw index {r} outside 0..{self.R - 1}")
        return CrnLayer(
            usage=self.usage_innovations(user_index)[r],
            news=self.news_innovations(user_index)[r],
        )


def build_crn(dataset: Dataset, R: int, seed: int) -> CrnStore:
    """Size a CRN store to a dataset: one slot per observed use / news click."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    usage_cap = np.array([p.total_uses() for p in dataset], dtype=np.int64)
    news_cap = np.array([p.total_news() for p in dataset], dtype=np.int64)
    return CrnStore(
        seed=int(seed),
        R=int(R),
        user_ids=dataset.user_ids(),
        usage_capacity=usage_cap,
        news_capacity=news_cap,
    )


def _class_day_terms(
    panel: UserPanel,
    latent_class: LatentClass,
    params: ModelParams,
    layer: CrnLayer,
) -> np.ndarray:
    """Per-day log-likelihood terms along one simulated signal path.

    Reference implementation: runs the belief recursion forward day by day,
    reconstructing signals as ``v_i + sd * z`` from the draw layer.
    """
    profile = panel.profile.with_class(latent_class)
    v_i = representative_utility(profile, params)
    sigma_s_sq = signal_variance(profile, params)
    sigma_n_sq = params.sigma_n_sq
    sigma_s = math.sqrt(sigma_s_sq)
    sigma_n = math.sqrt(sigma_n_sq)

    needed_uses = panel.total_uses()
    needed_news = panel.total_news()
    if needed_uses > layer.usage.shape[0] or needed_news > layer.news.shape[0]:
        raise ValueError(
            f"CRN slots insufficient for user {panel.user_id}: "
            f"need {needed_uses} usage / {needed_news} news slots"
        )

    belief = initial_belief(params)
    terms = np.zeros(len(panel.observations))
    use_ptr = 0
    news_ptr = 0
    for j, obs in enumerate(panel.observations):
        terms[j] = day_log_likelihood(belief.mean, params.c, obs.w_total, obs.w_gpt)
        usage_sum = 0.0
        if obs.w_gpt:
            z = layer.usage[use_ptr : use_ptr + obs.w_gpt]
            usage_sum = float(np.sum(v_i + sigma_s * z))
            use_ptr += obs.w_gpt
        news_sum = 0.0
        if obs.w_news:
            z = layer.news[news_ptr : news_ptr + obs.w_news]
            news_sum = float(np.sum(v_i + sigma_n * z))
            news_ptr += obs.w_news
        belief = update_belief(
            belief, usage_sum, obs.w_gpt, news_sum, obs.w_news, sigma_s_sq, sigma_n_sq
        )
    return terms


def conditional_path_loglik(
    panel: UserPanel,
    latent_class: LatentClass,
    params: ModelParams,
    layer: CrnLayer,
) -> float:
    """Panel log-likelihood conditional on the class, along one draw's path."""
    return float(np.sum(_class_day_terms(panel, latent_class, params, layer)))


def _log_class_weights(params: ModelParams) -> tuple[float, float]:
    lam = params.lam
    # log(1 - logistic(lam)), log(logistic(lam)) without overflow
    if lam > 0:
        log_w2 = -math.log1p(math.exp(-lam))
        log_w1 = -lam + log_w2
    else:
        log_w1 = -math.log1p(math.exp(lam))
        log_w2 = lam + log_w1
    return log_w1, log_w2


def _logmeanexp(values: np.ndarray) -> float:
    mx = float(np.max(values))
    if not math.isfinite(mx):
        return mx
    return mx + math.log(float(np.sum(np.exp(values - mx)))) - math.log(values.size)


def user_simulated_loglik(
    panel: UserPanel,
    params: ModelParams,
    crn: CrnStore,
    R: int | None = None,
    mixing: str = "per_user",
    draw_average: str = "per_path",
) -> float:
    """Simulated log-likelihood for one user.

    ``mixing`` sets the latent-class mixing level (see module docstring).
    ``draw_average`` applies under ``per_user`` mixing: ``per_path`` averages
    whole-path likelihoods over draws (the module default), ``per_day``
    averages each class-conditional day likelihood over draws before the
    product over days, which trades full path coherence for Monte Carlo noise
    that does not compound with panel length.  Everything is accumulated in
    log space; an all-zero panel returns 0.  Raises if the result underflows
    to ``-inf``.
    """
    R = _check_draws(crn, R)
    _check_modes(mixing, draw_average)
    idx = crn.index_of(panel.user_id)
    usage = crn.usage_innovations(idx)
    news = crn.news_innovations(idx)
    log_w1, log_w2 = _log_class_weights(params)

    terms1 = np.empty((R, len(panel.observations)))
    terms2 = np.empty((R, len(panel.observations)))
    for r in range(R):
        layer = CrnLayer(usage=usage[r], news=news[r])
        terms1[r] = _class_day_terms(panel, LatentClass.CLASS1, params, layer)
        terms2[r] = _class_day_terms(panel, LatentClass.CLASS2, params, layer)

    if mixing == "per_observation":
        # literal per-day plug-in: each day's likelihood level is averaged
        # over draws (classes mixed within the day) before the product
        day_mix = np.logaddexp(log_w1 + terms1, log_w2 + terms2)  # (R, T)
        value = float(np.sum(_logmeanexp_axis0(day_mix)))
    elif draw_average == "per_path":
        # mix the path likelihoods once per user, then average over draws
        draw_values = np.logaddexp(
            log_w1 + terms1.sum(axis=1), log_w2 + terms2.sum(axis=1)
        )
        value = _logmeanexp(draw_values)
    else:
        # class-conditional day likelihoods averaged draw-wise, composed into
        # class path scores, mixed once per user
        s1 = float(np.sum(_logmeanexp_axis0(terms1)))
        s2 = float(np.sum(_logmeanexp_axis0(terms2)))
        value = float(np.logaddexp(log_w1 + s1, log_w2 + s2))
    if value == -math.inf or math.isnan(value):
        raise ValueError(f"simulated likelihood underflowed to -inf for user {panel.user_id}")
    return value


def _logmeanexp_axis0(values: np.ndarray) -> np.ndarray:
    mx = values.max(axis=0)
    return mx + np.log(np.mean(np.exp(values - mx), axis=0))


def _check_modes(mixing: str, draw_average: str) -> None:
    if mixing not in ("per_user", "per_observation"):
        raise ValueError(f"unknown mixing mode: {mixing!r}")
    if draw_average not in ("per_path", "per_day"):
        raise ValueError(f"unknown draw_average mode: {draw_average!r}")


def _checked_logmeanexp(draw_values: np.ndarray, user_id: str) -> float:
    value = _logmeanexp(draw_values)
    if value == -math.inf or math.isnan(value):
        raise ValueError(f"simulated likelihood underflowed to -inf for user {user_id}")
    return value


def _check_draws(crn: CrnStore, R: int | None) -> int:
    if R is None:
        return crn.R
    if not 1 <= R <= crn.R:
        raise ValueError(f"R must be in 1..{crn.R}, got {R}")
    return R


@dataclass(frozen=True)
class _Design:
    """Flattened, draw-expanded view of a dataset for fast evaluation."""

    seg_off: np.ndarray
    seg_w_gpt: np.ndarray
    seg_w_tot: np.ndarray
    seg_n_use: np.ndarray
    seg_n_news: np.ndarray
    zs: np.ndarray
    zn: np.ndarray
    day_off: np.ndarray
    day_w_gpt: np.ndarray
    day_w_tot: np.ndarray
    day_seg: np.ndarray
    covariates: np.ndarray  # (U, 5)
    user_ids: tuple[str, ...]
    R: int


def _compile_design(dataset: Dataset, crn: CrnStore, R: int) -> _Design:
    seg_off = [0]
    day_off = [0]
    seg_w_gpt: list[float] = []
    seg_w_tot: list[float] = []
    seg_n_use: list[float] = []
    seg_n_news: list[float] = []
    day_w_gpt: list[float] = []
    day_w_tot: list[float] = []
    day_seg: list[int] = []
    z_blocks_s: list[np.ndarray] = []
    z_blocks_n: list[np.ndarray] = []
    covariates = np.empty((len(dataset), 5))

    for i, panel in enumerate(dataset):
        covariates[i] = panel.profile.covariates()
        store_idx = crn.index_of(panel.user_id)
        if panel.total_uses() > crn.usage_capacity[store_idx] or panel.total_news() > crn.news_capacity[store_idx]:
            raise ValueError(f"CRN slots insufficient for user {panel.user_id}")
        usage_cum = crn.usage_innovations(store_idx).cumsum(axis=1)  # (R, cap)
        news_cum = crn.news_innovations(store_idx).cumsum(axis=1)

        n_use = 0
        n_news = 0
        seg_idx = -1
        prev_state = None
        for obs in panel.observations:
            state = (n_use, n_news)
            if state != prev_state:
                seg_idx = len(seg_w_gpt)
                seg_w_gpt.append(0.0)
                seg_w_tot.append(0.0)
                seg_n_use.append(float(n_use))
                seg_n_news.append(float(n_news))
                z_blocks_s.append(
                    usage_cum[:R, n_use - 1] if n_use > 0 else np.zeros(R)
                )
                z_blocks_n.append(
                    news_cum[:R, n_news - 1] if n_news > 0 else np.zeros(R)
                )
                prev_state = state
            seg_w_gpt[seg_idx] += obs.w_gpt
            seg_w_tot[seg_idx] += obs.w_total
            day_w_gpt.append(float(obs.w_gpt))
            day_w_tot.append(float(obs.w_total))
            day_seg.append(seg_idx)
            n_use += obs.w_gpt
            n_news += obs.w_news
        seg_off.append(len(seg_w_gpt))
        day_off.append(len(day_w_gpt))

    n_segs = len(seg_w_gpt)
    zs = np.vstack(z_blocks_s) if n_segs else np.zeros((0, R))
    zn = np.vstack(z_blocks_n) if n_segs else np.zeros((0, R))
    return _Design(
        seg_off=np.asarray(seg_off, dtype=np.int64),
        seg_w_gpt=np.asarray(seg_w_gpt),
        seg_w_tot=np.asarray(seg_w_tot),
        seg_n_use=np.asarray(seg_n_use),
        seg_n_news=np.asarray(seg_n_news),
        zs=np.ascontiguousarray(zs),
        zn=np.ascontiguousarray(zn),
        day_off=np.asarray(day_off, dtype=np.int64),
        day_w_gpt=np.asarray(day_w_gpt),
        day_w_tot=np.asarray(day_w_tot),
        day_seg=np.asarray(day_seg, dtype=np.int64),
        covariates=covariates,
        user_ids=dataset.user_ids(),
        R=R,
    )


class SimulatedLikelihood:
    """Reusable evaluator: compile a dataset + CRN store once, evaluate often.

    The compile step folds the data and innovations into cumulative-sum
    arrays; each :meth:`loglik` call is then a closed-form pass with no
    belief recursion.  Evaluations are deterministic and independent of the
    number of threads.
    """

    def __init__(self, dataset: Dataset, crn: CrnStore, R: int | None = None):
        if len(dataset) == 0:
            raise ValueError("dataset must contain at least one user")
        self.R = _check_draws(crn, R)
        self.crn = crn
        self._design = _compile_design(dataset, crn, self.R)

    @property
    def n_users(self) -> int:
        return len(self._design.user_ids)

    def user_logliks(
        self, params: ModelParams, mixing: str = "per_user", draw_average: str = "per_path"
    ) -> np.ndarray:
        """Per-user simulated log-likelihoods in dataset order."""
        _check_modes(mixing, draw_average)
        if mixing == "per_observation":
            mode = _kernels.MIX_PER_OBSERVATION
        elif draw_average == "per_day":
            mode = _kernels.MIX_PER_USER_DAY_AVG
        else:
            mode = _kernels.MIX_PER_USER
        d = self._design
        X = d.covariates

        util = params.alpha0 + X @ np.asarray(params.utility_coefficients())
        v = np.stack([util, util + params.delta_alpha0], axis=1)
        log_var = params.gamma0 + X @ np.asarray(params.variance_coefficients())
        log_var = np.stack([log_var, log_var + params.delta_gamma0], axis=1)
        log_var = np.clip(log_var, -_EXP_CLIP, _EXP_CLIP)
        inv_ssq = np.exp(-log_var)
        inv_s = np.exp(-0.5 * log_var)

        log_sn = min(max(params.log_sigma_n_sq, -_EXP_CLIP), _EXP_CLIP)
        inv_snsq = math.exp(-log_sn)
        inv_sn = math.exp(-0.5 * log_sn)
        prior_prec = math.exp(-params.log_sigma0_sq)
        prior_num = params.v0 * prior_prec
        log_w1, log_w2 = _log_class_weights(params)

        out = np.empty(self.n_users)
        _kernels.mixed_user_logliks(
            d.seg_off, d.seg_w_gpt, d.seg_w_tot, d.seg_n_use, d.seg_n_news,
            d.zs, d.zn,
            d.day_off, d.day_w_gpt, d.day_w_tot, d.day_seg,
            v, inv_ssq, inv_s,
            inv_snsq, inv_sn, prior_prec, prior_num,
            params.c, log_w1, log_w2,
            self.R, mode, out,
        )
        return out

    def loglik(
        self, params: ModelParams, mixing: str = "per_user", draw_average: str = "per_path"
    ) -> float:
        """Dataset log-likelihood: fixed-order sum of per-user terms."""
        per_user = self.user_logliks(params, mixing, draw_average)
        bad = ~np.isfinite(per_user)
        if bad.any():
            uid = self._design.user_ids[int(np.argmax(bad))]
            raise ValueError(f"non-finite simulated likelihood for user {uid}")
        return float(np.sum(per_user))


def total_simulated_loglik(
    dataset: Dataset,
    params: ModelParams,
    crn: CrnStore,
    R: int | None = None,
    mixing: str = "per_user",
    draw_average: str = "per_path",
) -> float:
    """One-off dataset log-likelihood (compiles an evaluator internally)."""
    return SimulatedLikelihood(dataset, crn, R).loglik(params, mixing, draw_average)
