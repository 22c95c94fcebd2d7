"""Pure-Python/numpy dynamic-programming kernels for the lattice losses.

Fallback backend; same interface as the compiled kernels in ``_kernels.pyx``.
All reductions are log-sum-exp with max subtraction.
"""

from __future__ import annotations

import math

import numpy as np

NEG_INF = -math.inf


def _lse2(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def transducer_dp(lp_blank: np.ndarray, lp_label: np.ndarray):
    """Forward-backward over the (t, u) transducer lattice.

    lp_blank: (T, U+1) emission log-prob of blank at each state.
    lp_label: (T, U) emission log-prob of the required next label.

    Returns (total_loglik, occ_blank (T,U+1), occ_label (T,U)) where the
    occupancies are posterior probabilities of taking each transition.
    Termination is the blank transition out of (T-1, U).
    """
    T, U1 = lp_blank.shape
    U = U1 - 1

    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + lp_blank[t - 1, u] if t > 0 else NEG_INF
            b = alpha[t, u - 1] + lp_label[t, u - 1] if u > 0 else NEG_INF
            alpha[t, u] = _lse2(a, b)
    total = alpha[T - 1, U] + lp_blank[T - 1, U]

    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = lp_blank[T - 1, U]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            a = lp_blank[t, u] + beta[t + 1, u] if t + 1 < T else NEG_INF
            b = lp_label[t, u] + beta[t, u + 1] if u < U else NEG_INF
            beta[t, u] = _lse2(a, b)

    occ_blank = np.zeros((T, U1))
    occ_label = np.zeros((T, U))
    for t in range(T):
        for u in range(U1):
            if alpha[t, u] == NEG_INF:
                continue
            if t + 1 < T:
                v = alpha[t, u] + lp_blank[t, u] + beta[t + 1, u] - total
                occ_blank[t, u] = math.exp(v) if v > -700 else 0.0
            elif u == U:
                v = alpha[t, u] + lp_blank[t, u] - total
                occ_blank[t, u] = math.exp(v) if v > -700 else 0.0
            if u < U:
                v = alpha[t, u] + lp_label[t, u] + beta[t, u + 1] - total
                occ_label[t, u] = math.exp(v) if v > -700 else 0.0
    return float(total), occ_blank, occ_label


def ctc_dp(lp: np.ndarray, ext: np.ndarray):
    """Forward-backward over the blank-interleaved CTC lattice.

    lp: (T, V+1) per-frame log-distributions, blank at index 0.
    ext: extended label sequence (blank, y1, blank, ..., blank), length 2U+1.

    Returns (total_loglik, posterior (T, S)) with posterior[t, s] the
    probability of being at extended state s on frame t.
    """
    T = lp.shape[0]
    S = len(ext)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            best = alpha[t - 1, s]
            if s >= 1:
                best = _lse2(best, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                best = _lse2(best, alpha[t - 1, s - 2])
            alpha[t, s] = best + lp[t, ext[s]] if best != NEG_INF else NEG_INF

    total = alpha[T - 1, S - 1]
    if S > 1:
        total = _lse2(total, alpha[T - 1, S - 2])

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = lp[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S - 1, -1, -1):
            best = beta[t + 1, s]
            if s + 1 < S:
                best = _lse2(best, beta[t + 1, s + 1])
            if s + 2 < S and ext[s + 2] != 0 and ext[s + 2] != ext[s]:
                best = _lse2(best, beta[t + 1, s + 2])
            beta[t, s] = best + lp[t, ext[s]] if best != NEG_INF else NEG_INF

    post = np.zeros((T, S))
    for t in range(T):
        for s in range(S):
            if alpha[t, s] == NEG_INF or beta[t, s] == NEG_INF:
                continue
            v = alpha[t, s] + beta[t, s] - lp[t, ext[s]] - total
            post[t, s] = math.exp(v) if v > -700 else 0.0
    return float(total), post
