"""Full-sum lattice losses with exact analytic gradients.

Four losses share two DP kernels (compiled or pure-Python, selected at
import time in ``__init__``):

* rnnt_loss     - standard softmax transducer over V+1 logits, blank index 0
* hat_loss      - blank probability sigma(z[0]), labels (1-b) * softmax(z[1:])
* aux_hat_loss  - HAT over speaker labels; slot 0 carries the shared blank logit
* ctc_loss      - standard CTC over per-frame normalized log-distributions

The DP marginalizes over all monotone alignments with a mandatory terminal
blank at state (T, U). Gradients are assembled from transition occupancies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from . import backend


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    infeasible: bool = False


def _log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    # log sigma(x) = -softplus(-x), stable on both tails
    return -np.logaddexp(0.0, -x)


def _validate_transducer(logits: np.ndarray, labels: np.ndarray, vmax: int) -> None:
    if logits.ndim != 3:
        raise ShapeError(f"transducer logits must be T x (U+1) x (V+1), got {logits.shape}")
    T, U1, _ = logits.shape
    if len(labels) != U1 - 1:
        raise ShapeError(f"labels length {len(labels)} != U={U1 - 1} from logits")
    if not np.all(np.isfinite(logits)):
        raise ShapeError("non-finite logits")
    if len(labels) and (labels.min() < 1 or labels.max() > vmax):
        raise ShapeError(f"labels out of range [1, {vmax}]")


def rnnt_loss(logits: np.ndarray, labels) -> LossResult:
    """Negative log-likelihood of `labels` under the softmax transducer."""
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _validate_transducer(logits, labels, logits.shape[2] - 1)
    T, U1, _ = logits.shape
    U = U1 - 1

    lp = _log_softmax(logits)
    lp_blank = np.ascontiguousarray(lp[:, :, 0])
    lp_label = np.ascontiguousarray(lp[np.arange(T)[:, None], np.arange(U)[None, :], labels[None, :]]) \
        if U > 0 else np.zeros((T, 0))

    total, occ_blank, occ_label = backend.transducer_dp(lp_blank, lp_label)

    # dL/dlp is -occupancy at the taken transitions; chain through log-softmax.
    occ_sum = occ_blank.copy()
    if U > 0:
        occ_sum[:, :U] += occ_label
    grad = np.exp(lp) * occ_sum[:, :, None]
    grad[:, :, 0] -= occ_blank
    if U > 0:
        grad[:, :U, :][np.arange(T)[:, None], np.arange(U)[None, :], labels[None, :]] -= occ_label
    return LossResult(loss=-total, grad=grad)


def _hat_emissions(logits: np.ndarray, labels: np.ndarray):
    T, U1, _ = logits.shape
    U = U1 - 1
    z0 = logits[:, :, 0]
    lp_blank = np.ascontiguousarray(_log_sigmoid(z0))
    log1mb = _log_sigmoid(-z0)
    ls = _log_softmax(logits[:, :, 1:])
    if U > 0:
        lp_label = np.ascontiguousarray(
            log1mb[:, :U]
            + ls[np.arange(T)[:, None], np.arange(U)[None, :], (labels - 1)[None, :]]
        )
    else:
        lp_label = np.zeros((T, 0))
    return lp_blank, lp_label, ls


def _hat_grad(logits: np.ndarray, labels: np.ndarray,
              occ_blank: np.ndarray, occ_label: np.ndarray,
              ls: np.ndarray) -> np.ndarray:
    T, U1, _ = logits.shape
    U = U1 - 1
    b = 1.0 / (1.0 + np.exp(-np.clip(logits[:, :, 0], -500, 500)))
    occ_l_sum = np.zeros((T, U1))
    if U > 0:
        occ_l_sum[:, :U] = occ_label

    grad = np.zeros_like(logits)
    # blank slot: through log sigma(z0) and log(1 - b)
    grad[:, :, 0] = -occ_blank * (1.0 - b) + occ_l_sum * b
    # label slots: through the label softmax
    grad[:, :, 1:] = np.exp(ls) * occ_l_sum[:, :, None]
    if U > 0:
        grad[:, :U, 1:][np.arange(T)[:, None], np.arange(U)[None, :], (labels - 1)[None, :]] -= occ_label
    return grad


def hat_loss(logits: np.ndarray, labels) -> LossResult:
    """Blank-factored transducer loss: b = sigma(z[0]), labels share (1-b)."""
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _validate_transducer(logits, labels, logits.shape[2] - 1)

    lp_blank, lp_label, ls = _hat_emissions(logits, labels)
    total, occ_blank, occ_label = backend.transducer_dp(lp_blank, lp_label)
    grad = _hat_grad(logits, labels, occ_blank, occ_label, ls)
    return LossResult(loss=-total, grad=grad)


def aux_hat_loss(aux_logits: np.ndarray, speaker_labels) -> LossResult:
    """HAT loss over per-token speaker labels.

    Slot 0 of `aux_logits` must hold the main joiner's blank logit; the
    returned gradient's slot 0 is the contribution that flows back into that
    shared logit.
    """
    return hat_loss(aux_logits, speaker_labels)


def ctc_min_frames(labels: np.ndarray) -> int:
    """Frames needed for a feasible CTC alignment (repeats need a blank)."""
    U = len(labels)
    repeats = int(np.sum(labels[1:] == labels[:-1])) if U > 1 else 0
    return U + repeats


def ctc_loss(log_probs: np.ndarray, labels, check: bool = True) -> LossResult:
    """CTC loss over per-frame log-distributions (blank at index 0)."""
    log_probs = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.ndim != 2:
        raise ShapeError(f"ctc log_probs must be T x (V+1), got {log_probs.shape}")
    T, V1 = log_probs.shape
    if len(labels) and (labels.min() < 1 or labels.max() > V1 - 1):
        raise ShapeError(f"labels out of range [1, {V1 - 1}]")
    if check:
        norms = np.abs(np.log(np.sum(np.exp(log_probs), axis=1)))
        if np.max(norms) > 1e-3:
            raise ShapeError("ctc rows are not normalized log-distributions")

    if T < ctc_min_frames(labels):
        return LossResult(loss=np.inf, grad=np.zeros_like(log_probs), infeasible=True)

    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    total, post = backend.ctc_dp(log_probs, ext)

    grad = np.zeros_like(log_probs)
    for s, sym in enumerate(ext):
        grad[:, sym] -= post[:, s]
    return LossResult(loss=-total, grad=grad)
