"""Numpy implementation of the log-domain forward-backward recursion.

Reference implementation for the compiled extension; selected automatically
when the extension is unavailable (or forced via HMMCHOICE_PURE=1).
All arrays are padded to the longest panel; ``lengths`` gives each person's
true number of waves and padded cells are never read.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def _logsumexp_last(a: np.ndarray) -> np.ndarray:
    """log-sum-exp over the last axis, tolerating all--inf slices."""
    m = a.max(axis=-1)
    finite = np.isfinite(m)
    safe = np.where(finite, m, 0.0)
    s = np.exp(a - safe[..., None]).sum(axis=-1)
    with np.errstate(divide="ignore"):
        return np.where(finite, safe + np.log(s), NEG_INF)


def _normalize_log(a: np.ndarray) -> np.ndarray:
    """exp-normalize log weights along the last axis (rows may be all -inf)."""
    m = a.max(axis=-1, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a - safe)
    tot = e.sum(axis=-1, keepdims=True)
    return e / np.where(tot > 0, tot, 1.0)


def forward_backward(log_pi, log_A, log_E, lengths):
    """Log-domain forward-backward over a padded panel.

    Parameters
    ----------
    log_pi : (N, S) initial state log-probabilities per person.
    log_A : (N, Tmax-1, S, S) transition log-probabilities; slice [n, t-1]
        moves wave t to wave t+1 (1-based), i.e. rows r, columns s.
    log_E : (N, Tmax, S) emission log-probabilities.
    lengths : (N,) number of observed waves per person.

    Returns
    -------
    log_marginal : (N,) log evidence per person (-inf when some wave kills
        every class).
    filtered : (N, Tmax, S) P(state at t | waves 1..t).
    smoothed : (N, Tmax, S) P(state at t | all waves).
    pairwise : (N, Tmax-1, S, S) joint smoothed P(state t-1 = r, state t = s).
    dead_wave : (N,) first 0-based wave where all classes hit zero
        probability, -1 if none.
    """
    log_pi = np.asarray(log_pi, dtype=float)
    log_E = np.asarray(log_E, dtype=float)
    log_A = np.asarray(log_A, dtype=float)
    lengths = np.asarray(lengths, dtype=np.int64)
    N, Tmax, S = log_E.shape

    log_alpha = np.full((N, Tmax, S), NEG_INF)
    log_beta = np.full((N, Tmax, S), NEG_INF)
    filtered = np.zeros((N, Tmax, S))
    smoothed = np.zeros((N, Tmax, S))
    pairwise = np.zeros((N, max(Tmax - 1, 0), S, S))
    dead_wave = np.full(N, -1, dtype=np.int64)

    log_alpha[:, 0] = log_pi + log_E[:, 0]
    alive_rows = _logsumexp_last(log_alpha[:, 0])
    dead_wave[~np.isfinite(alive_rows)] = 0
    for t in range(1, Tmax):
        active = lengths > t
        prev = log_alpha[:, t - 1]  # (N, S)
        trans = _logsumexp_last(prev[:, :, None] + log_A[:, t - 1])  # over origin r
        log_alpha[:, t] = np.where(active[:, None], trans + log_E[:, t], NEG_INF)
        row_tot = _logsumexp_last(log_alpha[:, t])
        newly_dead = active & ~np.isfinite(row_tot) & (dead_wave < 0)
        dead_wave[newly_dead] = t

    last = lengths - 1
    log_marginal = _logsumexp_last(log_alpha[np.arange(N), last])
    log_marginal = np.where(dead_wave >= 0, NEG_INF, log_marginal)

    for t in range(Tmax):
        filtered[:, t] = _normalize_log(log_alpha[:, t])

    # backward pass
    log_beta[np.arange(N), last] = 0.0
    for t in range(Tmax - 2, -1, -1):
        has_next = lengths > t + 1
        nxt = log_A[:, t] + (log_E[:, t + 1] + log_beta[:, t + 1])[:, None, :]
        val = _logsumexp_last(nxt)  # over destination s
        log_beta[:, t] = np.where(has_next[:, None], val, log_beta[:, t])

    for t in range(Tmax):
        smoothed[:, t] = _normalize_log(log_alpha[:, t] + log_beta[:, t])

    # pairwise smoothed marginals, normalized by the evidence
    ok = np.isfinite(log_marginal)
    lm_safe = np.where(ok, log_marginal, 0.0)
    for t in range(1, Tmax):
        active = (lengths > t) & ok
        joint = (
            log_alpha[:, t - 1, :, None]
            + log_A[:, t - 1]
            + (log_E[:, t] + log_beta[:, t])[:, None, :]
        )
        with np.errstate(invalid="ignore"):
            p = np.exp(joint - lm_safe[:, None, None])
        pairwise[:, t - 1] = np.where(active[:, None, None], p, 0.0)

    # zero out padding so downstream reductions can ignore lengths
    wave_idx = np.arange(Tmax)[None, :]
    pad = wave_idx >= lengths[:, None]
    filtered[pad] = 0.0
    smoothed[pad] = 0.0
    return log_marginal, filtered, smoothed, pairwise, dead_wave
