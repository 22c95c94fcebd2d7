"""Transcript round trips and end-to-end session scoring."""

import numpy as np
import pytest

from surtkit.decoding import (
    ChannelHypothesis,
    Emission,
    GroupDecode,
    SessionTranscript,
)
from surtkit.errors import DataError
from surtkit.heat import Utterance
from surtkit.mixsim import Session, UtteranceGroup
from surtkit.scoring import (
    GroupHyp,
    groups_from_transcript,
    read_transcript,
    score_sessions,
    write_transcript,
)


def _emission(frame, token, rel, k_max=3):
    post = np.full(k_max, 0.1)
    post[rel - 1] = 1.0 - 0.1 * (k_max - 1)
    return Emission(frame=frame, token=token, rel_speaker=rel,
                    blank_conf=0.7, spk_posterior=post)


def _transcript():
    h1 = ChannelHypothesis(emissions=[_emission(0, 1, 1), _emission(2, 2, 1)])
    h2 = ChannelHypothesis(emissions=[_emission(1, 3, 2)])
    g0 = GroupDecode(hyps=(h1, h2), rel_to_global={1: 1, 2: 2}, k_m=0)
    h3 = ChannelHypothesis(emissions=[_emission(0, 4, 1)])
    g1 = GroupDecode(hyps=(h3, ChannelHypothesis()), rel_to_global={1: 2}, k_m=0)
    return SessionTranscript(session_id="sA", groups=[g0, g1], num_global=2)


def test_transcript_round_trip(tmp_path):
    tr = _transcript()
    path = tmp_path / "hyp.jsonl"
    write_transcript([tr], path)
    loaded = read_transcript(path)
    want = groups_from_transcript(tr)
    assert list(loaded) == ["sA"]
    got = loaded["sA"]
    assert len(got) == len(want)
    for a, b in zip(got, want):
        assert a.tokens == b.tokens
        assert a.globals == b.globals
        assert a.rels == b.rels
        for pa, pb in zip(a.posteriors, b.posteriors):
            assert np.allclose(pa, pb, atol=1e-5)


def test_read_transcript_pads_empty_groups_from_summary(tmp_path):
    tr = SessionTranscript(
        session_id="sB",
        groups=[GroupDecode(hyps=(ChannelHypothesis(), ChannelHypothesis()),
                            rel_to_global={}, k_m=0)] * 3,
        num_global=0)
    path = tmp_path / "hyp.jsonl"
    write_transcript([tr], path)
    loaded = read_transcript(path)
    assert len(loaded["sB"]) == 3
    assert all(gh.tokens == ([], []) for gh in loaded["sB"])


def test_read_transcript_errors(tmp_path):
    with pytest.raises(DataError):
        read_transcript(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(DataError):
        read_transcript(bad)


def _ref_session():
    F = 4
    u1 = Utterance(tokens=[1, 2], speaker=3, start_frame=0, end_frame=4)
    u2 = Utterance(tokens=[3], speaker=5, start_frame=1, end_frame=3)
    g0 = UtteranceGroup(utterances=[u1, u2], mixture=np.zeros((4, F)),
                        overlap_ratio=0.5)
    u3 = Utterance(tokens=[4], speaker=5, start_frame=0, end_frame=2)
    g1 = UtteranceGroup(utterances=[u3], mixture=np.zeros((2, F)),
                        overlap_ratio=0.0)
    return Session(session_id="sA", groups=[g0, g1], group_starts=[0, 10])


def test_score_sessions_perfect_hypothesis():
    sess = _ref_session()
    hyp = {
        "sA": [
            GroupHyp(tokens=([1, 2], [3]), globals=([1, 1], [2]),
                     rels=([1, 1], [2]),
                     posteriors=[np.array([0.9, 0.1])] * 3),
            GroupHyp(tokens=([4], []), globals=([2], []), rels=([1], []),
                     posteriors=[np.array([0.2, 0.8])]),
        ]
    }
    report, per = score_sessions([sess], hyp)
    assert report.wer == 0.0
    assert report.cpwer == 0.0
    assert report.wder == 0.0 and report.wder_defined
    assert report.counting_accuracy == 1.0
    assert per["sA"]["cpwer"] == 0.0
    assert per["sA"]["orc_wer"] == 0.0


def test_score_sessions_counts_speaker_confusions():
    sess = _ref_session()
    # tokens all correct but the second group is attributed to speaker 1's
    # stream; cpWER and WDER must both see the attribution error
    hyp = {
        "sA": [
            GroupHyp(tokens=([1, 2], [3]), globals=([1, 1], [2]),
                     rels=([1, 1], [2]),
                     posteriors=[np.array([0.9, 0.1])] * 3),
            GroupHyp(tokens=([4], []), globals=([1], []), rels=([1], []),
                     posteriors=[np.array([0.9, 0.1])]),
        ]
    }
    report, per = score_sessions([sess], hyp)
    assert report.wer == 0.0          # channel-optimal token streams match
    assert report.cpwer > 0.0         # but the speaker stream is wrong
    assert report.wder > 0.0
    assert 0.0 < per["sA"]["wder"] <= 1.0


def test_score_sessions_mismatched_manifest():
    sess = _ref_session()
    with pytest.raises(DataError):
        score_sessions([sess], {})
    with pytest.raises(DataError):
        score_sessions([sess], {"sA": [GroupHyp()]})   # wrong group count


def test_entropy_bucketed_by_reference_speaker_count():
    sess = _ref_session()
    sharp = np.array([0.99, 0.01])
    flat = np.array([0.5, 0.5])
    hyp = {
        "sA": [
            GroupHyp(tokens=([1, 2], [3]), globals=([1, 1], [2]),
                     rels=([1, 1], [2]), posteriors=[flat] * 3),
            GroupHyp(tokens=([4], []), globals=([2], []), rels=([1], []),
                     posteriors=[sharp]),
        ]
    }
    report, _ = score_sessions([sess], hyp)
    ent = report.entropy_by_speaker_count
    assert set(ent) == {1, 2}
    assert ent[1] < ent[2]
