"""Compiled inner loop for Monte Carlo runs of the mixture SR statistics.

The kernel consumes AR-whitened observations ``X~`` (shape ``(H, N)``) and a
table of whitened signal residuals, and reproduces ``DetectionState`` for the
independent-stream Gaussian mean-shift model.
"""

from __future__ import annotations

import math

import numba
import numpy as np

ANCHOR_ABSOLUTE = 0
ANCHOR_CHANGE = 1


@numba.njit(cache=True, inline="always")
def _logaddexp0(a):
    if a > 0.0:
        return a + math.log1p(math.exp(-a))
    return math.log1p(math.exp(a))


@numba.njit(cache=True)
def _log_mixture(lam_kg, logp, K, equal_full, log_c, esp):
    """log of the pattern mixture for one (k, g) row of per-stream log-LRs."""
    N = lam_kg.shape[0]
    if equal_full:
        s = 0.0
        for i in range(N):
            s += _logaddexp0(logp[i] + lam_kg[i])
        if s > 50.0:
            return log_c + s
        if s <= 0.0:
            return -np.inf
        return log_c + math.log(math.expm1(s))
    esp[0] = 0.0
    for j in range(1, K + 1):
        esp[j] = -np.inf
    for i in range(N):
        a = logp[i] + lam_kg[i]
        for j in range(K, 0, -1):
            b = a + esp[j - 1]
            c = esp[j]
            if b == -np.inf:
                continue
            if c == -np.inf:
                esp[j] = b
            elif c > b:
                esp[j] = c + math.log1p(math.exp(b - c))
            else:
                esp[j] = b + math.log1p(math.exp(c - b))
    m = -np.inf
    for j in range(1, K + 1):
        if esp[j] > m:
            m = esp[j]
    if m == -np.inf:
        return -np.inf
    acc = 0.0
    for j in range(1, K + 1):
        acc += math.exp(esp[j] - m)
    return log_c + m + math.log(acc)


@numba.njit(cache=True)
def sr_trajectory(xres, sig_abs, sig_age, anchor, p, thetas, inv_var, logw, logp, K, equal_full,
                  log_c, log_r, window, stop_log, log_rg_out):
    """Run the double-mixture SR statistic over ``xres``.

    Fills ``log_rg_out[n-1, g]`` and returns ``(log_R_W trajectory, n_done)``.
    Computation stops after the first ``n`` with ``log R_W(n) >= stop_log``.
    """
    H, N = xres.shape
    G = thetas.shape[0]
    cap = H if window <= 0 else min(window, H)
    lam = np.zeros((cap, G, N))
    ks = np.empty(cap, np.int64)
    out = np.full(H, np.nan)
    logmix = np.empty(cap)
    esp = np.empty(K + 1)
    lrg = np.empty(G)
    count = 0
    head = 0
    for n in range(1, H + 1):
        # open candidate k = n - 1
        if count < cap:
            slot = (head + count) % cap
            count += 1
        else:
            slot = head
            head = (head + 1) % cap
        ks[slot] = n - 1
        for g in range(G):
            for i in range(N):
                lam[slot, g, i] = 0.0
        for c in range(count):
            s = (head + c) % cap
            k = ks[s]
            for i in range(N):
                if anchor == ANCHOR_CHANGE:
                    sr = sig_age[n - k, i]
                else:
                    q = min(p, n - k - 1)
                    sr = sig_abs[n, q, i]
                a = sr * xres[n - 1, i] * inv_var[i]
                b = 0.5 * sr * sr * inv_var[i]
                for g in range(G):
                    th = thetas[g, i]
                    lam[s, g, i] += th * a - th * th * b
        for g in range(G):
            m = -np.inf
            for c in range(count):
                s = (head + c) % cap
                v = _log_mixture(lam[s, g], logp, K, equal_full, log_c, esp)
                logmix[c] = v
                if v > m:
                    m = v
            if log_r > -np.inf and ks[head] == 0:
                v = log_r + logmix[0]
                logmix_extra = v
                if v > m:
                    m = v
            else:
                logmix_extra = -np.inf
            if m == -np.inf:
                lrg[g] = -np.inf
            else:
                acc = 0.0
                for c in range(count):
                    acc += math.exp(logmix[c] - m)
                if logmix_extra > -np.inf:
                    acc += math.exp(logmix_extra - m)
                lrg[g] = m + math.log(acc)
            log_rg_out[n - 1, g] = lrg[g]
        m = -np.inf
        for g in range(G):
            v = logw[g] + lrg[g]
            if v > m:
                m = v
        acc = 0.0
        for g in range(G):
            acc += math.exp(logw[g] + lrg[g] - m)
        lw = m + math.log(acc)
        out[n - 1] = lw
        if lw >= stop_log:
            return out, n
    return out, H


def signal_tables(model, horizon: int):
    """Whitened signal residual tables for :func:`sr_trajectory`.

    ``sig_abs[t, q, i] = S_t - sum_{j<=q} rho_j S_{t-j}`` (absolute anchoring)
    ``sig_age[a, i]``  = the same in signal age with ``q = min(p, a - 1)``.
    """
    N, p = model.n_streams, model.p
    t = np.arange(horizon + 1, dtype=float)
    S = np.stack([model.profiles[i](t) for i in range(N)], axis=1)  # (H+1, N), S_0 = 0
    sig_abs = np.zeros((horizon + 1, p + 1, N))
    sig_abs[:, 0, :] = S
    for q in range(1, p + 1):
        shifted = np.zeros_like(S)
        shifted[q:] = S[:-q]
        sig_abs[:, q, :] = sig_abs[:, q - 1, :] - model.rho[:, q - 1][None, :] * shifted
    sig_age = np.zeros((horizon + 1, N))
    for a in range(1, horizon + 1):
        sig_age[a] = sig_abs[a, min(p, a - 1)]
    return sig_abs, sig_age


@numba.njit(cache=True)
def sr_trajectory_linear(xres, sig_abs, p, thetas, inv_var, logw, logp, K, equal_full, log_c, log_r,
                         window, stop_log, log_rg_out):
    """Absolute-anchoring variant of :func:`sr_trajectory` working with likelihood ratios directly.

    With absolute anchoring the one-step increment depends on ``k`` only through
    ``q = min(p, n - k - 1)``, so each step needs ``(p + 1) G N`` exponentials and
    the per-candidate work is multiply-add only.  ``prod(1 + a_i) - 1`` is
    accumulated as ``D <- D (1 + a) + a`` to avoid cancellation.  Returns
    ``(trajectory, n_done, ok)``; ``ok`` is False if a ratio left the safe range,
    in which case the caller must use the log-domain kernel.
    """
    H, N = xres.shape
    G = thetas.shape[0]
    cap = H if window <= 0 else min(window, H)
    lr = np.ones((cap, G, N))
    ks = np.empty(cap, np.int64)
    out = np.full(H, np.nan)
    inc = np.empty((p + 1, G, N))
    pw = np.exp(logp)
    mix = np.empty(cap)
    esp = np.empty(K + 1)
    big = 1e280
    count = 0
    head = 0
    for n in range(1, H + 1):
        if count < cap:
            slot = (head + count) % cap
            count += 1
        else:
            slot = head
            head = (head + 1) % cap
        ks[slot] = n - 1
        for g in range(G):
            for i in range(N):
                lr[slot, g, i] = 1.0
        for q in range(min(p, n - 1) + 1):
            for i in range(N):
                sr = sig_abs[n, q, i]
                a = sr * xres[n - 1, i] * inv_var[i]
                b = 0.5 * sr * sr * inv_var[i]
                for g in range(G):
                    th = thetas[g, i]
                    inc[q, g, i] = math.exp(th * a - th * th * b)
        lw_acc = 0.0
        for g in range(G):
            tot = 0.0
            for c in range(count):
                s = (head + c) % cap
                q = min(p, n - ks[s] - 1)
                if equal_full:
                    d = 0.0
                    for i in range(N):
                        v = lr[s, g, i] * inc[q, g, i]
                        lr[s, g, i] = v
                        a = pw[i] * v
                        d = d * (1.0 + a) + a
                    val = d
                else:
                    esp[0] = 1.0
                    for j in range(1, K + 1):
                        esp[j] = 0.0
                    for i in range(N):
                        v = lr[s, g, i] * inc[q, g, i]
                        lr[s, g, i] = v
                        a = pw[i] * v
                        for j in range(K, 0, -1):
                            esp[j] += a * esp[j - 1]
                    val = 0.0
                    for j in range(1, K + 1):
                        val += esp[j]
                if not val < big:
                    return out, n, False
                mix[c] = val
                tot += val
            if log_r > -np.inf and ks[head] == 0:
                tot += math.exp(log_r) * mix[0]
            if tot > 0.0:
                lg = log_c + math.log(tot)
            else:
                lg = -np.inf
            log_rg_out[n - 1, g] = lg
            lw_acc += math.exp(logw[g]) * tot
        if lw_acc > 0.0:
            lw = log_c + math.log(lw_acc)
        else:
            lw = -np.inf
        out[n - 1] = lw
        if lw >= stop_log:
            return out, n, True
    return out, H, True
