"""Path-enumeration oracle for the transducer lattices.

Explicitly enumerates all C(T+U-1, U) monotone alignments (the final step is
the mandatory terminal blank) and sums path probabilities in the log domain.
Intended for verification only; guarded to tiny instances.
"""

from __future__ import annotations

import itertools

import numpy as np

from .api import _log_sigmoid, _log_softmax


def enumerate_paths_oracle(logits: np.ndarray, labels, mode: str) -> float:
    """Loss by explicit alignment enumeration. mode in {rnnt, hat, aux}."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    T, U1, _ = logits.shape
    U = U1 - 1
    if T + U > 12:
        raise ValueError(f"oracle guard: T+U = {T + U} > 12")
    if mode not in ("rnnt", "hat", "aux"):
        raise ValueError(f"unknown mode {mode!r}")

    if mode == "rnnt":
        lp = _log_softmax(logits)
        lp_blank = lp[:, :, 0]
        def lp_lab(t, u):
            return lp[t, u, labels[u]]
    else:
        z0 = logits[:, :, 0]
        lp_blank = _log_sigmoid(z0)
        log1mb = _log_sigmoid(-z0)
        ls = _log_softmax(logits[:, :, 1:])
        def lp_lab(t, u):
            return log1mb[t, u] + ls[t, u, labels[u] - 1]

    n_steps = T + U
    path_logps = []
    # choose which of the first n_steps-1 moves emit labels; the last move is
    # always the terminal blank out of (T-1, U)
    for label_positions in itertools.combinations(range(n_steps - 1), U):
        label_set = set(label_positions)
        t = u = 0
        logp = 0.0
        for step in range(n_steps):
            if step in label_set:
                logp += lp_lab(t, u)
                u += 1
            else:
                logp += lp_blank[t, u]
                t += 1
        assert t == T and u == U
        path_logps.append(logp)

    m = max(path_logps)
    total = m + np.log(np.sum(np.exp(np.asarray(path_logps) - m)))
    return float(-total)
