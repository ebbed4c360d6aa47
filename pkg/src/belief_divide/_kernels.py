"""Numba kernels for the simulated panel log-likelihood.

The conjugate belief recursion telescopes: the start-of-day belief depends on
the history only through cumulative signal counts and cumulative innovation
sums, both of which are fixed once the data and the common-random-number
store are fixed.  Days sharing the same cumulative counts are pre-aggregated
into "segments", so one evaluation is a flat loop over
(user, class, segment, draw) with no sequential dependence.

Each user's output is computed independently inside a ``prange`` iteration
and written to its own slot, so results are bit-identical for any worker
count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

MIX_PER_USER = 0
MIX_PER_OBSERVATION = 1
MIX_PER_USER_DAY_AVG = 2


@njit(cache=True, fastmath=True, inline="always")
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True, fastmath=True, inline="always")
def _logaddexp(a, b):
    if a >= b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(parallel=True, cache=True, fastmath=True)
def mixed_user_logliks(
    seg_off,      # (U+1,) int64: segment ranges per user
    seg_w_gpt,    # (S,) float64: tool choices summed over the segment
    seg_w_tot,    # (S,) float64: opportunities summed over the segment
    seg_n_use,    # (S,) float64: cumulative uses before the segment
    seg_n_news,   # (S,) float64: cumulative news clicks before the segment
    zs,           # (S, R) float64: usage-innovation prefix sums at seg_n_use
    zn,           # (S, R) float64: news-innovation prefix sums at seg_n_news
    day_off,      # (U+1,) int64: day ranges per user (per-observation mixing)
    day_w_gpt,    # (D,) float64
    day_w_tot,    # (D,) float64
    day_seg,      # (D,) int64: segment carrying each day's belief state
    v,            # (U, 2) float64: representative utility per class
    inv_ssq,      # (U, 2) float64: 1 / usage-signal variance per class
    inv_s,        # (U, 2) float64: 1 / usage-signal std dev per class
    inv_snsq,     # float64: 1 / news-signal variance
    inv_sn,       # float64
    prior_prec,   # float64: 1 / prior variance
    prior_num,    # float64: prior mean / prior variance
    c,            # float64: outside-option utility
    log_w1,       # float64: log class-1 probability
    log_w2,       # float64
    n_draws,      # int64
    mode,         # int64: MIX_PER_USER or MIX_PER_OBSERVATION
    out,          # (U,) float64
):
    n_users = seg_off.shape[0] - 1
    R = n_draws
    for i in prange(n_users):
        if mode == MIX_PER_USER:
            L = np.zeros((2, R))
            for k in range(2):
                vi = v[i, k]
                isq = inv_ssq[i, k]
                iss = inv_s[i, k]
                for s in range(seg_off[i], seg_off[i + 1]):
                    b_tot = seg_w_tot[s]
                    if b_tot == 0.0:
                        continue
                    a_gpt = seg_w_gpt[s]
                    q = seg_n_use[s] * isq + seg_n_news[s] * inv_snsq
                    invp = 1.0 / (prior_prec + q)
                    base = (prior_num + vi * q) * invp - c
                    for r in range(R):
                        x = base + (zs[s, r] * iss + zn[s, r] * inv_sn) * invp
                        L[k, r] += a_gpt * x - b_tot * _softplus(x)
            mx = -np.inf
            mix = np.empty(R)
            for r in range(R):
                m = _logaddexp(log_w1 + L[0, r], log_w2 + L[1, r])
                mix[r] = m
                if m > mx:
                    mx = m
            acc = 0.0
            for r in range(R):
                acc += np.exp(mix[r] - mx)
            out[i] = mx + np.log(acc) - np.log(R)
        elif mode == MIX_PER_USER_DAY_AVG:
            # class-conditional day likelihoods averaged over draws day by
            # day, composed into class path scores, then mixed once per user
            S = np.zeros(2)
            lev = np.empty(R)
            for k in range(2):
                vi = v[i, k]
                isq = inv_ssq[i, k]
                iss = inv_s[i, k]
                total_k = 0.0
                for d in range(day_off[i], day_off[i + 1]):
                    b_tot = day_w_tot[d]
                    if b_tot == 0.0:
                        continue
                    a_gpt = day_w_gpt[d]
                    s = day_seg[d]
                    q = seg_n_use[s] * isq + seg_n_news[s] * inv_snsq
                    invp = 1.0 / (prior_prec + q)
                    base = (prior_num + vi * q) * invp - c
                    mx = -np.inf
                    for r in range(R):
                        x = base + (zs[s, r] * iss + zn[s, r] * inv_sn) * invp
                        l = a_gpt * x - b_tot * _softplus(x)
                        lev[r] = l
                        if l > mx:
                            mx = l
                    acc = 0.0
                    for r in range(R):
                        acc += np.exp(lev[r] - mx)
                    total_k += mx + np.log(acc) - np.log(R)
                S[k] = total_k
            out[i] = _logaddexp(log_w1 + S[0], log_w2 + S[1])
        else:
            # literal per-observation plug-in: every user-day likelihood is
            # approximated by its own draw average (classes mixed per day)
            # before logs are taken and the product over days is formed
            total = 0.0
            mix = np.empty(R)
            for d in range(day_off[i], day_off[i + 1]):
                b_tot = day_w_tot[d]
                if b_tot == 0.0:
                    continue  # both classes give likelihood 1
                a_gpt = day_w_gpt[d]
                s = day_seg[d]
                q0 = seg_n_use[s] * inv_ssq[i, 0] + seg_n_news[s] * inv_snsq
                q1 = seg_n_use[s] * inv_ssq[i, 1] + seg_n_news[s] * inv_snsq
                invp0 = 1.0 / (prior_prec + q0)
                invp1 = 1.0 / (prior_prec + q1)
                base0 = (prior_num + v[i, 0] * q0) * invp0 - c
                base1 = (prior_num + v[i, 1] * q1) * invp1 - c
                mx = -np.inf
                for r in range(R):
                    x0 = base0 + (zs[s, r] * inv_s[i, 0] + zn[s, r] * inv_sn) * invp0
                    x1 = base1 + (zs[s, r] * inv_s[i, 1] + zn[s, r] * inv_sn) * invp1
                    l0 = a_gpt * x0 - b_tot * _softplus(x0)
                    l1 = a_gpt * x1 - b_tot * _softplus(x1)
                    m = _logaddexp(log_w1 + l0, log_w2 + l1)
                    mix[r] = m
                    if m > mx:
                        mx = m
                acc = 0.0
                for r in range(R):
                    acc += np.exp(mix[r] - mx)
                total += mx + np.log(acc) - np.log(R)
            out[i] = total
