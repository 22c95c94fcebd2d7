"""Lattice losses: oracle equivalence, gradients, and structural properties."""

import numpy as np
import pytest

from surtkit import lattice
from surtkit.lattice import (
    BACKEND_NAME,
    aux_hat_loss,
    ctc_loss,
    ctc_min_frames,
    hat_loss,
    rnnt_loss,
)
from surtkit.lattice.oracle import enumerate_paths_oracle

MODES = {
    "rnnt": rnnt_loss,
    "hat": hat_loss,
    "aux": aux_hat_loss,
}


def random_instance(rng, t_max=6, u_max=4, v=5, scale=2.0):
    t = int(rng.integers(1, t_max + 1))
    u = int(rng.integers(0, min(u_max, 10 - t) + 1))
    logits = rng.normal(scale=scale, size=(t, u + 1, v + 1))
    labels = list(rng.integers(1, v + 1, size=u).astype(int))
    return logits, labels


@pytest.mark.parametrize("mode", sorted(MODES))
def test_dp_matches_path_enumeration(mode):
    rng = np.random.default_rng(hash(mode) % 2**32)
    for _ in range(120):
        logits, labels = random_instance(rng)
        got = MODES[mode](logits, labels).loss
        want = enumerate_paths_oracle(logits, labels, mode)
        assert abs(got - want) < 1e-10


def test_single_frame_uniform_logits_closed_form():
    # T=1, U=0: the only path is one terminal blank
    v = 2
    z = np.zeros((1, 1, v + 1))
    assert rnnt_loss(z, []).loss == pytest.approx(np.log(v + 1), abs=1e-12)
    assert hat_loss(z, []).loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_shift_invariance_rnnt():
    # adding a constant to every logit leaves the softmax unchanged
    rng = np.random.default_rng(0)
    logits, labels = random_instance(rng)
    base = rnnt_loss(logits, labels).loss
    shifted = rnnt_loss(logits + 3.7, labels).loss
    assert shifted == pytest.approx(base, abs=1e-10)


def fd_grad(fn, logits, eps=1e-5):
    out = np.zeros_like(logits)
    it = np.nditer(logits, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        lp = logits.copy(); lp[idx] += eps
        lm = logits.copy(); lm[idx] -= eps
        out[idx] = (fn(lp).loss - fn(lm).loss) / (2 * eps)
        it.iternext()
    return out


@pytest.mark.parametrize("mode", sorted(MODES))
def test_gradients_match_finite_differences(mode):
    rng = np.random.default_rng(len(mode))
    worst = 0.0
    for _ in range(8):
        logits, labels = random_instance(rng, t_max=4, u_max=3, v=4, scale=1.0)
        res = MODES[mode](logits, labels)
        fd = fd_grad(lambda z, f=MODES[mode], lab=labels: f(z, lab), logits)
        rel = np.abs(res.grad - fd) / (np.abs(res.grad) + np.abs(fd) + 1e-12)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_hat_emission_factorization():
    # blank prob is sigmoid(z0); each label prob is (1-b) * softmax(z[1:])
    rng = np.random.default_rng(7)
    logits, labels = random_instance(rng)
    if not labels:
        labels = [1]
        logits = rng.normal(size=(logits.shape[0], 2, logits.shape[2]))
    from surtkit.lattice.api import _hat_emissions
    lp_blank, lp_label, _ = _hat_emissions(logits, np.asarray(labels))
    b = 1.0 / (1.0 + np.exp(-logits[:, :, 0]))
    assert np.allclose(np.exp(lp_blank), b, atol=1e-12)
    sm = np.exp(logits[:, :, 1:])
    sm /= sm.sum(axis=-1, keepdims=True)
    for u, lab in enumerate(labels):
        want = (1.0 - b[:, u]) * sm[:, u, lab - 1]
        assert np.allclose(np.exp(lp_label[:, u]), want, atol=1e-12)


def test_ctc_loss_and_gradient():
    rng = np.random.default_rng(3)
    t, v = 7, 4
    labels = [2, 2, 3]
    logits = rng.normal(size=(t, v + 1))
    lp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    res = ctc_loss(lp, labels)
    assert np.isfinite(res.loss) and not res.infeasible
    fd = fd_grad(lambda z: ctc_loss(z, labels, check=False), lp)
    rel = np.abs(res.grad - fd) / (np.abs(res.grad) + np.abs(fd) + 1e-12)
    assert rel.max() < 1e-4


def test_ctc_single_frame_uniform_closed_form():
    v = 2
    lp = np.full((1, v + 1), -np.log(v + 1.0))
    assert ctc_loss(lp, [1]).loss == pytest.approx(np.log(v + 1.0), abs=1e-12)


def test_ctc_infeasible_when_too_short():
    labels = [1, 1]  # repeat needs a separating blank: min 3 frames
    assert ctc_min_frames(np.asarray(labels)) == 3
    lp = np.full((2, 3), -np.log(3.0))
    res = ctc_loss(lp, labels)
    assert res.infeasible and res.loss == np.inf
    assert np.all(res.grad == 0.0)


def test_unnormalized_ctc_input_rejected():
    from surtkit.errors import ShapeError
    with pytest.raises(ShapeError):
        ctc_loss(np.zeros((3, 4)), [1])


def test_backends_agree():
    import surtkit.lattice._py_backend as py
    rng = np.random.default_rng(5)
    from surtkit.lattice.api import _hat_emissions
    for _ in range(20):
        logits, labels = random_instance(rng)
        lp_blank, lp_label, _ = _hat_emissions(logits, np.asarray(labels, dtype=np.int64))
        total_py, ob_py, ol_py = py.transducer_dp(lp_blank, lp_label)
        got = hat_loss(logits, labels).loss
        assert abs(got - (-total_py)) < 1e-12


def test_backend_name_reported():
    assert BACKEND_NAME in ("cython", "python")
