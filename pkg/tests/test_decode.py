"""Greedy decoding, prefix construction/stripping, and buffer selection."""

import numpy as np
import pytest

from surtkit.decoding import (
    SpeakerBuffer,
    build_prefix,
    decode_session,
    greedy_joint_decode,
    select_buffer_window,
    strip_prefix,
    _window_frames,
)
from surtkit.errors import ShapeError
from surtkit.mixsim import CorpusSpec, SessionConfig, make_corpus, make_session
from surtkit.model import ModelConfig, SurtModel


@pytest.fixture(scope="module")
def model():
    cfg = ModelConfig(feature_dim=6, vocab_size=5, k_max=4, mask_hidden=8,
                      enc_layers=2, enc_hidden=8, aux_layers=1, aux_hidden=8,
                      pred_hidden=6, joint_hidden=8, subsample=2, tau=4, seed=7)
    return SurtModel(cfg)


def test_token_and_speaker_streams_synchronized(model):
    # every emission carries both a token and a speaker, in range, at a
    # monotonically nondecreasing frame index
    rng = np.random.default_rng(0)
    for trial in range(50):
        x = rng.normal(size=(rng.integers(4, 20), model.config.feature_dim))
        h1, h2 = greedy_joint_decode(model, x)
        for hyp in (h1, h2):
            assert len(hyp.tokens) == len(hyp.rel_speakers)
            frames = [e.frame for e in hyp.emissions]
            assert frames == sorted(frames)
            for e in hyp.emissions:
                assert 1 <= e.token <= model.config.vocab_size
                assert 1 <= e.rel_speaker <= model.config.k_max
                assert 0.0 <= e.blank_conf <= 1.0
                assert np.isclose(e.spk_posterior.sum(), 1.0)


def test_max_symbols_per_frame_cap(model):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(16, model.config.feature_dim))
    for cap in (1, 2):
        h1, h2 = greedy_joint_decode(model, x, max_symbols=cap)
        for hyp in (h1, h2):
            frames = [e.frame for e in hyp.emissions]
            for t in set(frames):
                assert frames.count(t) <= cap


def test_build_prefix_prepends_buffers_in_order():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 3))
    b1 = SpeakerBuffer(global_id=1, frames=rng.normal(size=(4, 3)),
                       confidence=1.0, source_chunk=0)
    b2 = SpeakerBuffer(global_id=2, frames=rng.normal(size=(4, 3)),
                       confidence=2.0, source_chunk=1)
    same, k0 = build_prefix([], x)
    assert k0 == 0 and same is x
    xt, k = build_prefix([b1, b2], x)
    assert k == 2
    assert np.array_equal(xt[:4], b1.frames)
    assert np.array_equal(xt[4:8], b2.frames)
    assert np.array_equal(xt[8:], x)


def test_strip_prefix_drops_exactly_prefix_frames():
    f = np.arange(20, dtype=float).reshape(10, 2)
    fa = np.arange(30, dtype=float).reshape(10, 3)
    f2, fa2 = strip_prefix(f, fa, k_m=2, tau=4, s=2)   # drops 2*4/2 = 4 frames
    assert np.array_equal(f2, f[4:])
    assert np.array_equal(fa2, fa[4:])
    f3, fa3 = strip_prefix(f, fa, k_m=0, tau=4, s=2)
    assert np.array_equal(f3, f)


def test_strip_prefix_errors():
    f = np.zeros((3, 2))
    with pytest.raises(ShapeError):
        strip_prefix(f, f, k_m=2, tau=4, s=2)   # needs 4 frames, has 3
    with pytest.raises(ShapeError):
        strip_prefix(f, f, k_m=1, tau=5, s=2)   # subsample must divide tau


def test_select_buffer_window_matches_brute_force():
    rng = np.random.default_rng(3)
    tau, s = 8, 2
    w = tau // s
    for _ in range(200):
        trace = rng.normal(size=rng.integers(w, 30))
        start, conf, short = select_buffer_window(trace, tau, s)
        assert not short
        sums = [trace[i:i + w].sum() for i in range(len(trace) - w + 1)]
        best = max(sums)
        assert np.isclose(conf, best)
        assert np.isclose(sums[start], best)
        assert all(not np.isclose(sums[i], best) or i >= start
                   for i in range(len(sums)))  # earliest tie wins


def test_select_buffer_window_short_trace_flagged():
    start, conf, short = select_buffer_window(np.array([1.0, 2.0]), tau=8, s=2)
    assert short and start == 0 and np.isclose(conf, 3.0)
    with pytest.raises(ValueError):
        select_buffer_window(np.array([]), tau=8, s=2)


def test_window_frames_pads_by_repetition():
    x = np.arange(6, dtype=float).reshape(3, 2)
    out = _window_frames(x, start_enc=0, tau=8, s=2)
    assert out.shape == (8, 2)
    assert np.array_equal(out[:3], x) and np.array_equal(out[3:6], x)


def _tiny_session(seed):
    corpus = make_corpus(CorpusSpec(vocab_size=5, feature_dim=6, num_speakers=4,
                                    frames_per_token=2, seed=9))
    cfg = SessionConfig(groups=3, speakers=3, min_tokens=3, max_tokens=4,
                        enrollment_tokens=4)
    return make_session(corpus, cfg, "s0", np.random.default_rng(seed))


def test_decode_session_modes_and_label_reconciliation(model):
    session = _tiny_session(4)
    for mode in ("none", "prefix", "enrollment"):
        out = decode_session(model, session, mode=mode)
        assert out.session_id == "s0"
        assert len(out.groups) == len(session.groups)
        for gd in out.groups:
            for ch in (0, 1):
                gids = gd.global_speakers(ch)
                assert all(g >= 1 for g in gids)
        if mode == "enrollment":
            # enrollment ids are fixed up front, one per enrolled speaker
            enrolled = len(session.enrollment)
            for gd in out.groups:
                assert gd.k_m == enrolled
    with pytest.raises(ValueError):
        decode_session(model, session, mode="bogus")


def test_decode_session_none_gives_fresh_ids_per_group(model):
    session = _tiny_session(5)
    out = decode_session(model, session, mode="none")
    seen: set[int] = set()
    for gd in out.groups:
        gids = set(gd.rel_to_global.values())
        assert not gids & seen   # no id reuse across groups
        seen |= gids
